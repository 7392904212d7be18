#ifndef FRACSYM_H
#define FRACSYM_H

#include <stddef.h>
#include <stdint.h>

// Status returned by every fallible call.
typedef enum FsStatus {
  FS_STATUS_OK = 0,
  FS_STATUS_NULL_POINTER = 1,
  FS_STATUS_INVALID_INPUT = 2,
  FS_STATUS_NUMERICAL = 3,
  FS_STATUS_HYPOTHESIS = 4,
  FS_STATUS_HASH_MISMATCH = 5,
  FS_STATUS_MALFORMED = 6,
  FS_STATUS_IO = 7,
  FS_STATUS_LENGTH_MISMATCH = 8,
  FS_STATUS_PANIC = 9,
} FsStatus;

typedef enum FsOperatorKind {
  FS_OPERATOR_KIND_RESTRICTED = 0,
  FS_OPERATOR_KIND_SPECTRAL = 1,
} FsOperatorKind;

typedef enum FsConcentration {
  FS_CONCENTRATION_LESS = 0,
  FS_CONCENTRATION_GREATER = 1,
  FS_CONCENTRATION_EQUAL = 2,
  FS_CONCENTRATION_INCOMPARABLE = 3,
} FsConcentration;

// Lattice domain.
typedef struct FsDomain FsDomain;

// Assembled operator matrix.
typedef struct FsOperator FsOperator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of the calling thread into `buf` (NUL
// terminated, truncated to `len - 1` bytes) and returns the full message
// length in bytes, excluding the terminator. `buf` may be null to query the
// length.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t fs_last_error_message(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *fs_version(void);

// Builds a domain from a shape description such as `"disk:1"` or
// `"union-intervals:0,1,2,3"` with `resolution` cells across its longest side.
//
// # Safety
// `shape` must be a NUL-terminated string and `out` a valid pointer.
enum FsStatus fs_domain_from_shape(const char *shape, size_t resolution, struct FsDomain **out);

// Parses a domain from its JSON description.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum FsStatus fs_domain_from_json(const char *json, struct FsDomain **out);

// Schwarz ball of `d` at the same spacing.
//
// # Safety
// `d` must be a live domain handle and `out` a valid pointer.
enum FsStatus fs_domain_schwarz_ball(const struct FsDomain *d, struct FsDomain **out);

// Number of active cells, or 0 for a null handle.
//
// # Safety
// `d` must be null or a live domain handle.
size_t fs_domain_len(const struct FsDomain *d);

// Spatial dimension (1 or 2), or 0 for a null handle.
//
// # Safety
// `d` must be null or a live domain handle.
size_t fs_domain_dim(const struct FsDomain *d);

// Measure of one cell, or 0 for a null handle.
//
// # Safety
// `d` must be null or a live domain handle.
double fs_domain_cell_measure(const struct FsDomain *d);

// Writes the cell centers as interleaved `(x, y)` pairs; `len` must be
// `2 * fs_domain_len(d)`. In 1D every `y` is zero.
//
// # Safety
// `d` must be a live domain handle and `xy` point to `len` writable doubles.
enum FsStatus fs_domain_centers(const struct FsDomain *d, double *xy, size_t len);

// Short content hash identifying the domain, written NUL-terminated into
// `buf`. Returns the hash length (16).
//
// # Safety
// `d` must be null or a live domain handle; `buf` null or `len` writable bytes.
size_t fs_domain_hash(const struct FsDomain *d, char *buf, size_t len);

// Releases a domain. Null is ignored.
//
// # Safety
// `d` must be null or a handle not yet freed.
void fs_domain_free(struct FsDomain *d);

// Assembles the restricted or spectral operator of order `sigma` on `d`.
//
// # Safety
// `d` must be a live domain handle and `out` a valid pointer.
enum FsStatus fs_operator_assemble(const struct FsDomain *d,
                                   double sigma,
                                   enum FsOperatorKind kind,
                                   struct FsOperator **out);

// Matrix dimension, or 0 for a null handle.
//
// # Safety
// `a` must be null or a live operator handle.
size_t fs_operator_len(const struct FsOperator *a);

// Copies the matrix in row-major order; `len` must be `n * n`.
//
// # Safety
// `a` must be a live operator handle and `out` point to `len` writable doubles.
enum FsStatus fs_operator_matrix(const struct FsOperator *a, double *out, size_t len);

// Exterior killing coefficients `T_i` (row sums of the matrix); `len` must be `n`.
//
// # Safety
// `a` must be a live operator handle and `out` point to `len` writable doubles.
enum FsStatus fs_operator_killing(const struct FsOperator *a, double *out, size_t len);

// `out = A u`; both arrays have length `n`.
//
// # Safety
// `a` must be a live operator handle; `u` and `out` must hold `len` doubles.
enum FsStatus fs_operator_apply(const struct FsOperator *a,
                                const double *u,
                                double *out,
                                size_t len);

// Releases an operator. Null is ignored.
//
// # Safety
// `a` must be null or a handle not yet freed.
void fs_operator_free(struct FsOperator *a);

// Smallest `k` eigenvalues in increasing order. When `psi1` is not null it
// receives the first eigenfunction (nonnegative, L²-normalized), which must
// have room for `n` doubles.
//
// # Safety
// `a` must be a live operator handle, `lambda` point to `k` writable doubles
// and `psi1` be null or point to `n` writable doubles.
enum FsStatus fs_eigensolve(const struct FsOperator *a, size_t k, double *lambda, double *psi1);

// Solves `A v + B(v) = f` for nonnegative `f`, with `B` given as
// `"linear:c"`, `"saturating"` or `"power:m"`.
//
// # Safety
// `a` must be a live operator handle, `nonlinearity` a NUL-terminated string,
// and `f`, `v` must hold `len` doubles.
enum FsStatus fs_solve_elliptic(const struct FsOperator *a,
                                const char *nonlinearity,
                                const double *f,
                                double *v,
                                size_t len);

// Decreasing rearrangement of `|f|` on `d`: the step values of `f*`, one per
// cell, each of width `fs_domain_cell_measure(d)`.
//
// # Safety
// `d` must be a live domain handle; `f` and `out` must hold `len` doubles.
enum FsStatus fs_decreasing_rearrangement(const struct FsDomain *d,
                                          const double *f,
                                          double *out,
                                          size_t len);

// Mass-concentration comparison of two step profiles `f*` (length `nf`,
// step width `wf`) and `g*` (length `ng`, step width `wg`) with tolerance
// `tol`; the verdict `LESS` means `f ≺ g`.
//
// # Safety
// `f` and `g` must hold `nf` and `ng` doubles; `verdict` must be valid.
enum FsStatus fs_concentration_compare(const double *f,
                                       size_t nf,
                                       double wf,
                                       const double *g,
                                       size_t ng,
                                       double wg,
                                       double tol,
                                       enum FsConcentration *verdict);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FRACSYM_H */
