#pragma once

#include <string>
#include <vector>

#include "mmfuse/gradcheck.hpp"

namespace mmfuse {

// Double-precision gradient verification targets: the full model plus each
// stage in isolation, with an optional deliberately corrupted backward pass
// to prove the check actually detects broken gradients.

struct VerifySection {
    std::string name;
    GradCheckReport report;
};

struct VerifyOptions {
    std::uint64_t seed = 7;
    double tolerance = 1e-4;
    bool mutate_sign_flip = false;  // corrupts the full-model backward pass
    GradCheckOptions gradcheck;
};

std::vector<VerifySection> run_verification(const VerifyOptions& opts);

bool verification_passes(const std::vector<VerifySection>& sections, double tolerance);

}  // namespace mmfuse
