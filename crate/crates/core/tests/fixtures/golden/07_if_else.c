int clamp(int v) {
    if (v > 10) {
        return 10;
    } else {
        return v;
    }
}
