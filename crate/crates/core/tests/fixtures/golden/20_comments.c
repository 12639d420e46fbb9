int quiet(int v) {
    /* block comment */
    return v; // trailing
}
