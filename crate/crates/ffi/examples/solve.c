/* Solve a problem file given on the command line and print its summary.
 *
 *   cc -Icrates/ffi/include crates/ffi/examples/solve.c \
 *      target/release/libcontscp_ffi.a -lm -lpthread -ldl -o solve
 */
#include <stdio.h>
#include <stdlib.h>

#include "contscp.h"

static char *slurp(const char *path) {
    FILE *f = fopen(path, "rb");
    if (!f) return NULL;
    fseek(f, 0, SEEK_END);
    long n = ftell(f);
    rewind(f);
    char *buf = malloc((size_t)n + 1);
    if (buf && fread(buf, 1, (size_t)n, f) != (size_t)n) {
        free(buf);
        buf = NULL;
    }
    if (buf) buf[n] = '\0';
    fclose(f);
    return buf;
}

int main(int argc, char **argv) {
    if (argc != 2) {
        fprintf(stderr, "usage: %s problem.toml\n", argv[0]);
        return 2;
    }
    char *text = slurp(argv[1]);
    if (!text) {
        perror(argv[1]);
        return 2;
    }
    ContscpProblem *problem = NULL;
    ContscpSolution *solution = NULL;
    int rc = 1;
    if (contscp_problem_from_toml(text, &problem) != CONTSCP_STATUS_OK ||
        contscp_solve(problem, &solution) != CONTSCP_STATUS_OK) {
        fprintf(stderr, "contscp: %s\n", contscp_last_error());
        goto done;
    }
    ContscpSummary s;
    contscp_solution_summary(solution, &s);
    printf("converged %d after %zu iterations, t_f = %.17g, cost = %.17g\n", s.converged, s.iterations, s.final_time, s.cost);
    ContscpResiduals r;
    if (contscp_solution_residuals(solution, &r) == CONTSCP_STATUS_OK)
        printf("adjoint %.3e  maximality %.3e  boundary %.3e\n", r.adjoint_defect, r.maximality_gap, r.boundary_residual);
    rc = s.converged ? 0 : 1;
done:
    contscp_solution_free(solution);
    contscp_problem_free(problem);
    free(text);
    return rc;
}
