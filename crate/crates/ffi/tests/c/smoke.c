#include <stdio.h>
#include <string.h>

#include "psg4d.h"

static int check(Psg4dStatus s, const char *what) {
    if (s != PSG4D_STATUS_OK) {
        const char *msg = psg4d_last_error();
        fprintf(stderr, "%s failed: %d %s\n", what, (int)s, msg ? msg : "");
        return 1;
    }
    return 0;
}

int main(void) {
    /* 2 frames of 1x4; a = cols 0..2, b = cols 1..3 */
    const uint8_t a[8] = {1, 1, 0, 0, 1, 1, 0, 0};
    const uint8_t b[8] = {0, 1, 1, 0, 0, 1, 1, 0};
    double iou = 0.0;
    if (check(psg4d_tube_iou(2, 1, 4, a, b, &iou), "tube_iou")) return 1;

    char *json = NULL;
    if (check(psg4d_parse_stage(4, "(Person 1, running toward, Person 2, 0.2, 0.8)", &json), "parse_stage")) return 1;
    int found = strstr(json, "running toward") != NULL;
    psg4d_string_free(json);

    Psg4dStatus bad = psg4d_parse_stage(9, "", &json);
    const char *err = psg4d_last_error();

    printf("version=%s iou=%.6f found=%d bad=%d err=%s\n", psg4d_version(), iou, found, (int)bad, err ? "yes" : "no");
    return 0;
}
