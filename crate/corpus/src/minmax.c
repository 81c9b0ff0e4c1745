#include <stdint.h>
int64_t sum_clamped(const int32_t *v, int n, int32_t lo, int32_t hi) {
  int64_t s = 0;
  for (int i = 0; i < n; i++) {
    int32_t x = v[i];
    if (x < lo) x = lo;
    else if (x > hi) x = hi;
    s += x;
  }
  return s;
}
