unsigned long my_strlen(const char *s) {
  unsigned long n = 0;
  while (s[n]) n++;
  return n;
}
int my_strcmp(const char *a, const char *b) {
  while (*a && *a == *b) { a++; b++; }
  return (unsigned char)*a - (unsigned char)*b;
}
void my_reverse(char *s) {
  unsigned long n = my_strlen(s);
  for (unsigned long i = 0; i < n / 2; i++) {
    char t = s[i];
    s[i] = s[n - 1 - i];
    s[n - 1 - i] = t;
  }
}
