// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// The fast self-check suite behind `pixdit verify`: gradient checks,
// integrator order, guidance rules and the structural invariants, each as a
// named check with a pass/fail result. The guidance check accepts an
// injectable combiner so tests can prove the check actually catches a
// broken implementation.

#include <functional>
#include <string>
#include <vector>

#include "pixdit/tensor.hpp"

namespace pixdit::verify {

struct CheckResult {
    std::string name;
    bool ok = false;
    std::string detail;
    double ms = 0.0;
};

// Same contract as guided_velocity: (v_cond, v_uncond, w, t, lo, hi) -> v.
using GuidanceFn = std::function<TensorD(const TensorD&, const TensorD&, double, double,
                                         double, double)>;

CheckResult check_flow_identities();
CheckResult check_flow_loss_gradient();
CheckResult check_integrator_exactness();
CheckResult check_integrator_order();
CheckResult check_guidance(const GuidanceFn& combine);
CheckResult check_adaln_identity();
CheckResult check_backbone_gradients();
CheckResult check_branch_gradients();
CheckResult check_mask_semantics();
CheckResult check_alignment_loss_bounds();
CheckResult check_branch_isolation();
CheckResult check_analysis_oracles();
CheckResult check_checkpoint_roundtrip();
CheckResult check_sampling_determinism();

// Runs every check; an injected guidance combiner (when non-null) replaces
// the real one, which is how the mutation-sanity test works.
std::vector<CheckResult> run_all(const GuidanceFn* injected_guidance = nullptr);

bool all_ok(const std::vector<CheckResult>& results);

}  // namespace pixdit::verify
