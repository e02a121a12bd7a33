#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "bix/arch.hpp"

namespace bix {

using BigInt = boost::multiprecision::cpp_int;

struct CostItem {
    std::string block;  // stage-qualified instance, e.g. "s3.enc.l2"
    int64_t params = 0;
    int64_t macs = 0;
};

// Operation-count conventions (documented in CostReport::conventions):
//   conv / 1x1 projection    out*in*kh*kw per output element (bias free)
//   conv transpose           in*out*kh*kw per *input* element (adjoint of conv)
//   batch norm               2 per element
//   bilinear resize          4 per output element (0 when pass-through)
//   max pool                 1 per output element
//   average of k streams     k per output element (0 when k == 1)
//   concat / relu            0
// MACs are counted for a single batch element at the stated input size.
struct CostReport {
    std::string arch;
    ArchConfig config;
    int64_t input_c = 0, input_h = 0, input_w = 0;
    int64_t params_conv = 0;   // shared table, independent of T
    int64_t params_norm = 0;   // per-iteration batch-norm affine
    int64_t params_total = 0;
    int64_t macs = 0;
    std::vector<CostItem> breakdown;
    std::string conventions;
};

// Conv/projection/transpose parameters; shared weights counted once, pruned
// blocks contribute nothing.
int64_t count_params_conv(const CompGraph& g);
// Batch-norm affine parameters, one instance per recurrence iteration.
int64_t count_params_norm(const CompGraph& g);
int64_t count_params(const CompGraph& g);

// Independent verification route: walks the raw parameter arrays and
// multiplies extents, with no reuse of the counting logic above.
int64_t count_params_raw_walk(const CompGraph& g);

int64_t count_macs(const CompGraph& g, int64_t input_h, int64_t input_w);

CostReport cost_report(const CompGraph& g, int64_t input_h, int64_t input_w);

std::string cost_report_json(const CostReport& r);
std::string cost_report_table(const CostReport& r);

// Size of the phase-1 connectivity search space as stated: the sum over
// k = 1..N-2 of C(N,k)^(L*(2T-1)), evaluated exactly.
BigInt search_space_size(int N, int L, int T);

// Cost of training all |P| sampled instances individually per step.
int64_t conventional_search_cost(int T, int64_t P_size, int64_t I_F, int64_t I_B);

// One-step cost of the progressive scheme:
// I_B + sum_{t=1..2T-1} (t*I_F + (2T-t)*I_F*|P|).
int64_t progressive_search_cost(int T, int64_t P_size, int64_t I_F, int64_t I_B);

}  // namespace bix
