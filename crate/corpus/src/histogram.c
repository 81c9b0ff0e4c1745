struct hist { unsigned bins[16]; unsigned total; };
void hist_add(struct hist *h, const unsigned char *data, int n) {
  for (int i = 0; i < n; i++) {
    h->bins[data[i] >> 4]++;
    h->total++;
  }
}
unsigned hist_max(const struct hist *h, int nbins) {
  unsigned m = 0;
  for (int i = 0; i < nbins; i++)
    if (h->bins[i] > m) m = h->bins[i];
  return m;
}
