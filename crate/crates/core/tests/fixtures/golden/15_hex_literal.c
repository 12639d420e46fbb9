unsigned mask(unsigned v) {
    return v & 0xFF;
}
