int both(int a, int b) {
    if (a && (b || !a)) return 1;
    return 0;
}
