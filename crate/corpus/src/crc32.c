unsigned crc32(const unsigned char *p, unsigned long len, int bits) {
  unsigned crc = 0xFFFFFFFFu;
  for (unsigned long i = 0; i < len; i++) {
    crc ^= p[i];
    for (int k = 0; k < bits; k++)
      crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
  }
  return ~crc;
}
