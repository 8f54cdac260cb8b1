#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gradcheck {

struct OpResult {
    std::string op;
    int trials = 0;
    double max_rel_error = 0.0;    // norm-wise ||analytic - fd|| / ||fd|| over inputs
    double max_forward_error = 0.0;  // ||op - reference|| / ||reference||
};

// Central differences (h = 1e-3) of a float64 reference of each op, compared with
// the float32 autodiff gradient of sum(w * op(inputs)) for random w.
std::vector<OpResult> run_op_checks(int trials, std::uint64_t seed);

// Exact R1 penalty of a small PatchGAN (float64 reference with a hand-written
// input gradient) differentiated by central differences over the discriminator
// parameters, against the double-backprop gradient from the library.
OpResult run_r1_check(int trials, std::uint64_t seed);

// Largest |<conv(x), y> - <x, conv_t(y)>| / (|<conv(x), y>| + 1) over random trials.
double adjoint_mismatch(int trials, std::uint64_t seed);

}  // namespace gradcheck
