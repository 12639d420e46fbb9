void greet(char *name) {
    printf("hi %s\n", name);
}
