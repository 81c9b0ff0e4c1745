static int gcd(int a, int b) {
  while (b != 0) {
    int t = a % b;
    a = b;
    b = t;
  }
  return a;
}
int lcm(int a, int b) { return a / gcd(a, b) * b; }
int coprime_count(int n) {
  int c = 0;
  for (int i = 1; i <= n; i++)
    if (gcd(i, n) == 1) c++;
  return c;
}
