int classify(int op, int x, int y) {
  switch (op) {
  case 0: return x + y;
  case 1: return x - y;
  case 2: return x * y;
  case 3: return y ? x / y : 0;
  case 4: return x << (y & 31);
  case 5: return x >> (y & 31);
  default: return -1;
  }
}
int eval_all(const int *ops, int n) {
  int acc = 0;
  for (int i = 0; i < n; i++) acc = classify(ops[i], acc, i + 1);
  return acc;
}
