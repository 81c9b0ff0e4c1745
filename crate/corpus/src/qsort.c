static void swap(int *a, int *b) { int t = *a; *a = *b; *b = t; }
static int partition(int *a, int lo, int hi) {
  int p = a[hi], i = lo;
  for (int j = lo; j < hi; j++)
    if (a[j] < p) swap(&a[i++], &a[j]);
  swap(&a[i], &a[hi]);
  return i;
}
void quicksort(int *a, int lo, int hi) {
  if (lo < hi) {
    int p = partition(a, lo, hi);
    quicksort(a, lo, p - 1);
    quicksort(a, p + 1, hi);
  }
}
