int guard(char *p) {
    if (p == NULL) return -1;
    *p = 0;
    return 0;
}
