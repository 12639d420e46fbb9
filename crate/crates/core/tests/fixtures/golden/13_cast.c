long widen(int v) {
    return (long) v;
}
