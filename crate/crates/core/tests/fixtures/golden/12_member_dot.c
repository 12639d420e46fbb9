int get(struct pt q) {
    return q.x + q.y;
}
