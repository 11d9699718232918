#include <stdio.h>
#include <string.h>
#include "sdfocc.h"

int main(int argc, char **argv) {
    if (argc != 2) return 64;
    SdfoccField *f = NULL;
    if (sdfocc_field_load("/nonexistent/field.socf", &f) != SDFOCC_STATUS_IO) return 1;
    if (sdfocc_last_error() == NULL || f != NULL) return 2;
    if (sdfocc_field_load(argv[1], &f) != SDFOCC_STATUS_OK) return 3;
    uint32_t res[3];
    if (sdfocc_field_resolution(f, res) != SDFOCC_STATUS_OK) return 4;
    double s = 0.0;
    if (sdfocc_field_sdf(f, 0.0, 0.0, 0.0, &s) != SDFOCC_STATUS_OK) return 5;
    printf("%s %u %u %u %.6f\n", sdfocc_version(), res[0], res[1], res[2], s);
    sdfocc_field_free(f);
    return 0;
}
