#pragma once

#include <string>
#include <vector>

#include "bix/errors.hpp"
#include "bix/nn_ops.hpp"

namespace bix {

enum class UpsampleMode { transpose, bilinear };

const char* to_string(FuseMode m);
const char* to_string(UpsampleMode m);
FuseMode fuse_mode_from_string(const std::string& s);
UpsampleMode upsample_mode_from_string(const std::string& s);

// Declarative description of a recurrent encoder-decoder network.
//
// Stages are numbered 1..2T; odd stages encode, even stages decode. Levels
// run 0..L with level 0 at input resolution and level l at 1/2^l scale.
struct ArchConfig {
    int T = 3;               // recurrence iterations (2T extraction stages)
    int L = 4;               // encoding depth
    double n_mult = 1.0;     // channel expansion multiplier
    int w_back = 4;          // backward skips, counted from the deepest level
    int base_width = 32;     // channels at level 0
    FuseMode fusion = FuseMode::concat;
    UpsampleMode upsample = UpsampleMode::transpose;

    int stages() const { return 2 * T; }
    int stage_pairs() const { return 2 * T - 1; }

    void validate() const;  // throws ConfigError

    bool operator==(const ArchConfig&) const = default;
};

enum class EdgeDirection { forward, backward };

// A skip between adjacent extraction stages. Forward edges carry encoder
// outputs to the following decoder stage; backward edges carry decoder
// outputs to the following encoder stage.
struct SkipEdge {
    int from_stage = 0;
    int from_level = 0;
    int to_stage = 0;
    int to_level = 0;
    EdgeDirection direction = EdgeDirection::forward;

    int pair() const { return from_stage; }

    friend auto operator<=>(const SkipEdge&, const SkipEdge&) = default;
};

// Edge set grouped per stage pair plus the config it belongs to.
struct Topology {
    std::string name;
    ArchConfig config;
    std::vector<SkipEdge> edges;

    // Sorts, deduplicates and validates every edge; throws TopologyError.
    void canonicalize();

    // sources_per_level[pair-1][to_level] = sorted incoming from_levels
    std::vector<std::vector<std::vector<int>>> pair_sources() const;

    int64_t edge_count() const { return static_cast<int64_t>(edges.size()); }

    bool operator==(const Topology&) const = default;
};

// Direction implied by the stage parity (odd stage feeds forward skips).
EdgeDirection direction_for_pair(int pair);

// Dense multi-scale edge set: (2T-1) * (L+1)^2 edges.
Topology dense_topology(const ArchConfig& cfg, const std::string& name);

// The built-in recurrent encoder-decoder edge set: same-level forward skips at
// every level, same-level backward skips at the w_back deepest encoder levels.
Topology bionet_topology(const ArchConfig& cfg, const std::string& name);

std::string topology_to_json(const Topology& t);
Topology topology_from_json(const std::string& text);

void save_topology(const Topology& t, const std::string& path);
Topology load_topology(const std::string& path);

}  // namespace bix
