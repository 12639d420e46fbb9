void noop(void) {
}
