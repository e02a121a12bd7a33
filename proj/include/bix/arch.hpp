#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "bix/nn_ops.hpp"
#include "bix/topology.hpp"

namespace bix {

enum class ArchKind { bionet, bionetpp, subnet };

const char* to_string(ArchKind k);

// pair (1-based) -> to_level -> sorted source levels feeding that block
using EdgeProvider = std::function<std::vector<std::vector<int>>(int pair)>;

struct ForwardHooks {
    // Test hook: removes (average fusion) or zeroes (concat fusion) every
    // backward-skip stream, including the iteration-1 duplicate.
    bool zero_backward_streams = false;

    // Phase-1 hook: replaces the plain average of a searching block's aligned
    // incoming skips with a learned selection. Arguments: pair, to_level,
    // aligned streams ordered by source level.
    std::function<Tensor(int pair, int to_level, const std::vector<Tensor>&)>
        skip_selector;
};

// An unrolled, weight-shared computation graph. Convolution parameters are
// keyed by (role, level) and shared across iterations; batch-norm states are
// keyed per stage instance and are never shared.
class CompGraph {
public:
    ArchKind kind = ArchKind::bionet;
    ArchConfig cfg;
    Topology topo;
    int in_channels = 3;
    int num_classes = 2;
    uint64_t seed = 0;

    std::map<std::string, ConvParams> params;
    std::map<std::string, BatchNormState> norms;

    ForwardHooks hooks;

    // Measured extraction-stage forwards (one per run_stage call).
    int64_t stage_forward_count = 0;

    int width(int level) const;
    bool flat_width() const { return kind != ArchKind::bionet; }

    // Highest populated level of a stage: bionet decoders stop at L-1 (slot L
    // belongs to the bridge); multi-scale stages populate 0..L.
    int top_level(int stage) const;
    bool block_exists(int stage, int level) const;
    bool is_live(int stage, int level) const;

    // For concat fusion: whether the encoder block at this level structurally
    // carries a backward slot (fixed across iterations so widths are stable).
    bool enc_has_backward_slot(int level) const;

    Tensor forward(const Tensor& batch, bool training);

    // Partial execution (phase-2 composes head and tail networks from these).
    Tensor run_pre(const Tensor& batch, bool training);
    std::vector<Tensor> run_stage(int stage, const std::vector<Tensor>& prev,
                                  const Tensor& x_pre, const EdgeProvider& edges,
                                  bool training);
    Tensor run_post(const Tensor& dec0, bool training);

    EdgeProvider topo_edges() const;

    // All learnable tensors (conv weights/biases, then norm affines), ordered
    // by key; the canonical order for optimizers and checkpoints.
    std::vector<Tensor> parameters() const;
    std::vector<std::string> parameter_names() const;
    void zero_grads();

    // Execution order of live blocks; every edge source precedes its target.
    std::vector<std::string> node_order() const;

    uint64_t structure_hash() const;

    static std::string block_key(int stage, int level, ArchKind kind, int L);

private:
    std::vector<std::vector<char>> live_;  // [stage-1][level]

    friend CompGraph build_graph(ArchKind, const ArchConfig&, const Topology&, int,
                                 int, uint64_t);

    Tensor conv_unit(const Tensor& x, const std::string& key, int stage,
                     bool training);
    Tensor align_stream(const Tensor& src, int from_level, int to_level,
                        bool to_encoder, int64_t h0, int64_t w0, bool training);
    void compute_liveness();
};

// Plain recurrent bi-directional network: doubling widths, concat or average
// fusion, transpose or bilinear upsampling, same-level skips, bridge block.
CompGraph build_bionet(const ArchConfig& cfg, int in_channels, int num_classes,
                       uint64_t seed);

// Multi-scale SuperNet: flat widths, dense cross-level skips, average fusion
// and bilinear resizing (both forced).
CompGraph build_bionet_pp(const ArchConfig& cfg, int in_channels, int num_classes,
                          uint64_t seed);

// SuperNet restricted to the given edge set; blocks with no path to the
// post-processing block are pruned.
CompGraph instantiate_subnet(const ArchConfig& supernet_cfg, const Topology& topo,
                             int in_channels, int num_classes, uint64_t seed);

}  // namespace bix
