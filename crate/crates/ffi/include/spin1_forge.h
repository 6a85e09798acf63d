#ifndef SPIN1_FORGE_H
#define SPIN1_FORGE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. The numeric values of the first five match the CLI exit codes
// where they overlap.
typedef enum S1fStatus {
  S1F_STATUS_OK = 0,
  S1F_STATUS_INVALID_ARGUMENT = 1,
  S1F_STATUS_CONFIG = 2,
  S1F_STATUS_SINGULARITY = 3,
  S1F_STATUS_NON_CONVERGENCE = 4,
  S1F_STATUS_DOMAIN = 5,
  S1F_STATUS_PRECONDITION = 6,
  S1F_STATUS_RESOURCE = 7,
  S1F_STATUS_PARSE = 8,
  S1F_STATUS_IO = 9,
  S1F_STATUS_PANIC = 10,
} S1fStatus;

// Ground state of a chain (finite or infinite).
typedef struct S1fChain S1fChain;

// Evaluated or optimized field design.
typedef struct S1fDesign S1fDesign;

// Molecular constants.
typedef struct S1fMolecule S1fMolecule;

// Summary numbers of a design.
typedef struct S1fDesignSummary {
  double nn_error;
  double theta;
  double u_khz;
  double nnn_ratio;
  // NaN when fewer than three separations were evaluated.
  double n3_ratio;
  double max_saturation;
  size_t n_fields;
  size_t n_warnings;
} S1fDesignSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread (empty after success).
// The pointer stays valid until the next call into the library.
const char *s1f_last_error(void);

// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum S1fStatus s1f_molecule_cacl(struct S1fMolecule **out);

// Parses molecule constants from TOML text.
//
// # Safety
// `toml` must be a NUL-terminated string and `out` writable.
enum S1fStatus s1f_molecule_from_toml(const char *toml, struct S1fMolecule **out);

// # Safety
// `m` must come from a molecule constructor and not be used afterwards.
void s1f_molecule_free(struct S1fMolecule *m);

// Writes u(r) = d²/(4πε₀r³) in MHz.
//
// # Safety
// `m` must be a live molecule handle and `out` writable.
enum S1fStatus s1f_dipole_energy_mhz(const struct S1fMolecule *m, double r_nm, double *out);

// Evaluates a field set (text in the field-file format) at spacing `dz_nm`
// over `ranges` separations.
//
// # Safety
// `m` must be a live molecule handle, `fields` NUL-terminated, `out` writable.
enum S1fStatus s1f_design_evaluate(const struct S1fMolecule *m,
                                   const char *fields,
                                   double dz_nm,
                                   size_t ranges,
                                   struct S1fDesign **out);

// Searches for `n_fields` ẑ-polarized fields approximating the target angle.
//
// # Safety
// `m` must be a live molecule handle and `out` writable.
enum S1fStatus s1f_design_optimize(const struct S1fMolecule *m,
                                   double theta,
                                   size_t n_fields,
                                   uint64_t seed,
                                   size_t starts,
                                   double dz_nm,
                                   size_t ranges,
                                   struct S1fDesign **out);

// # Safety
// `d` must be a live design handle and `out` writable.
enum S1fStatus s1f_design_summary(const struct S1fDesign *d, struct S1fDesignSummary *out);

// Copies the interaction at separation `(range + 1)·dz` into `out[162]`.
//
// # Safety
// `d` must be a live design handle and `out` must hold 162 doubles.
enum S1fStatus s1f_design_interaction(const struct S1fDesign *d, size_t range, double *out);

// Writes the design's fields in the field-file format. Returns the number
// of bytes needed (excluding the NUL) through `len`; the text is copied
// only when `cap` is large enough.
//
// # Safety
// `d` must be a live design handle, `buf` writable for `cap` bytes (or
// null with `cap == 0`), `len` writable.
enum S1fStatus s1f_design_fields(const struct S1fDesign *d, char *buf, size_t cap, size_t *len);

// # Safety
// `d` must come from a design constructor and not be used afterwards.
void s1f_design_free(struct S1fDesign *d);

// U(cosθ S·S + sinθ (S·S)²) into `out[162]`.
//
// # Safety
// `out` must hold 162 doubles.
enum S1fStatus s1f_bilinear_biquadratic(double theta, double u, double *out);

// Infinite-chain ground state by imaginary-time evolution with the default
// schedule.
//
// # Safety
// `h2` must hold 162 doubles and `out` be writable.
enum S1fStatus s1f_chain_itebd(const double *h2, size_t chi, struct S1fChain **out);

// Ground level of an open chain of `n` sites by exact diagonalization.
//
// # Safety
// `h2` must hold 162 doubles and `out` be writable.
enum S1fStatus s1f_chain_exact(const double *h2, size_t n, struct S1fChain **out);

// Energy per site (infinite) or total energy (finite).
//
// # Safety
// `c` must be a live chain handle and `out` writable.
enum S1fStatus s1f_chain_energy(const struct S1fChain *c, double *out);

// ⟨S^z_0 S^z_r⟩.
//
// # Safety
// `c` must be a live chain handle and `out` writable.
enum S1fStatus s1f_chain_sz_correlator(const struct S1fChain *c, size_t r, double *out);

// S_{S^z}(q) at `n` momenta.
//
// # Safety
// `c` must be a live chain handle; `q` and `out` must hold `n` doubles.
enum S1fStatus s1f_chain_sz_structure_factor(const struct S1fChain *c,
                                             const double *q,
                                             size_t n,
                                             size_t cutoff,
                                             double *out);

// # Safety
// `c` must come from a chain constructor and not be used afterwards.
void s1f_chain_free(struct S1fChain *c);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPIN1_FORGE_H */
