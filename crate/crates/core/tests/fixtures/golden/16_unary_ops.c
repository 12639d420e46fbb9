int neg(int v) {
    return -v + !v;
}
