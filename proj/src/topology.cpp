#include "bix/topology.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace bix {

using ordered_json = nlohmann::ordered_json;

const char* to_string(FuseMode m) {
    return m == FuseMode::concat ? "concat" : "average";
}
const char* to_string(UpsampleMode m) {
    return m == UpsampleMode::transpose ? "transpose" : "bilinear";
}

FuseMode fuse_mode_from_string(const std::string& s) {
    if (s == "concat") return FuseMode::concat;
    if (s == "average") return FuseMode::average;
    throw ParseError("unknown fusion mode '" + s + "'");
}

UpsampleMode upsample_mode_from_string(const std::string& s) {
    if (s == "transpose") return UpsampleMode::transpose;
    if (s == "bilinear") return UpsampleMode::bilinear;
    throw ParseError("unknown upsample mode '" + s + "'");
}

void ArchConfig::validate() const {
    if (T < 1) throw ConfigError("T must be >= 1");
    if (L < 1) throw ConfigError("L must be >= 1");
    if (!(n_mult > 0)) throw ConfigError("N_mult must be positive");
    if (base_width < 1) throw ConfigError("base_width must be >= 1");
    if (w_back < 0 || w_back > L) {
        throw ConfigError("W_back must lie in [0, L]");
    }
}

EdgeDirection direction_for_pair(int pair) {
    return pair % 2 == 1 ? EdgeDirection::forward : EdgeDirection::backward;
}

void Topology::canonicalize() {
    config.validate();
    for (const SkipEdge& e : edges) {
        if (e.to_stage != e.from_stage + 1) {
            throw TopologyError("edge " + std::to_string(e.from_stage) + "->" +
                                std::to_string(e.to_stage) +
                                ": to_stage must equal from_stage + 1");
        }
        if (e.from_stage < 1 || e.to_stage > config.stages()) {
            throw TopologyError("edge stage out of range [1, " +
                                std::to_string(config.stages()) + "]");
        }
        if (e.from_level < 0 || e.from_level > config.L || e.to_level < 0 ||
            e.to_level > config.L) {
            throw TopologyError("edge level out of range [0, " +
                                std::to_string(config.L) + "]");
        }
        if (e.direction != direction_for_pair(e.pair())) {
            throw TopologyError("edge direction inconsistent with stage parity at pair " +
                                std::to_string(e.pair()));
        }
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
}

std::vector<std::vector<std::vector<int>>> Topology::pair_sources() const {
    std::vector<std::vector<std::vector<int>>> out(
        static_cast<size_t>(config.stage_pairs()),
        std::vector<std::vector<int>>(static_cast<size_t>(config.L + 1)));
    for (const SkipEdge& e : edges) {
        out[static_cast<size_t>(e.pair() - 1)][static_cast<size_t>(e.to_level)]
            .push_back(e.from_level);
    }
    for (auto& pair : out) {
        for (auto& lv : pair) std::sort(lv.begin(), lv.end());
    }
    return out;
}

Topology dense_topology(const ArchConfig& cfg, const std::string& name) {
    Topology t;
    t.name = name;
    t.config = cfg;
    for (int pair = 1; pair <= cfg.stage_pairs(); ++pair) {
        for (int to = 0; to <= cfg.L; ++to) {
            for (int from = 0; from <= cfg.L; ++from) {
                t.edges.push_back({pair, from, pair + 1, to, direction_for_pair(pair)});
            }
        }
    }
    t.canonicalize();
    return t;
}

Topology bionet_topology(const ArchConfig& cfg, const std::string& name) {
    Topology t;
    t.name = name;
    t.config = cfg;
    for (int pair = 1; pair <= cfg.stage_pairs(); ++pair) {
        if (direction_for_pair(pair) == EdgeDirection::forward) {
            // encoder blocks live at levels 0..L-1; same-level skips
            for (int l = 0; l < cfg.L; ++l) {
                t.edges.push_back({pair, l, pair + 1, l, EdgeDirection::forward});
            }
        } else {
            for (int l = cfg.L - cfg.w_back; l < cfg.L; ++l) {
                t.edges.push_back({pair, l, pair + 1, l, EdgeDirection::backward});
            }
        }
    }
    t.canonicalize();
    return t;
}

std::string topology_to_json(const Topology& t) {
    ordered_json j;
    j["schema"] = 1;
    j["name"] = t.name;
    ordered_json c;
    c["T"] = t.config.T;
    c["L"] = t.config.L;
    c["N_mult"] = t.config.n_mult;
    c["W_back"] = t.config.w_back;
    c["base_width"] = t.config.base_width;
    c["fusion"] = to_string(t.config.fusion);
    c["upsample"] = to_string(t.config.upsample);
    j["config"] = c;
    ordered_json arr = ordered_json::array();
    for (const SkipEdge& e : t.edges) {
        ordered_json je;
        je["from_stage"] = e.from_stage;
        je["from_level"] = e.from_level;
        je["to_stage"] = e.to_stage;
        je["to_level"] = e.to_level;
        je["direction"] = e.direction == EdgeDirection::forward ? "forward" : "backward";
        arr.push_back(je);
    }
    j["edges"] = arr;
    return j.dump(2) + "\n";
}

namespace {

template <typename T>
T take(ordered_json& j, const char* field, const char* where) {
    auto it = j.find(field);
    if (it == j.end()) {
        throw ParseError(std::string("missing field '") + field + "' in " + where);
    }
    T v;
    try {
        v = it->get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad value for field '") + field + "' in " +
                         where + ": " + e.what());
    }
    j.erase(it);
    return v;
}

void expect_drained(const ordered_json& j, const char* where) {
    if (!j.empty()) {
        throw ParseError(std::string("unknown field '") + j.begin().key() + "' in " +
                         where);
    }
}

}  // namespace

Topology topology_from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("topology parse error: ") + e.what());
    }
    if (!j.is_object()) throw ParseError("topology file must hold a JSON object");

    const int schema = take<int>(j, "schema", "topology");
    if (schema != 1) {
        throw ParseError("unsupported topology schema " + std::to_string(schema));
    }
    Topology t;
    t.name = take<std::string>(j, "name", "topology");
    ordered_json c = take<ordered_json>(j, "config", "topology");
    t.config.T = take<int>(c, "T", "config");
    t.config.L = take<int>(c, "L", "config");
    t.config.n_mult = take<double>(c, "N_mult", "config");
    t.config.w_back = take<int>(c, "W_back", "config");
    t.config.base_width = take<int>(c, "base_width", "config");
    t.config.fusion = fuse_mode_from_string(take<std::string>(c, "fusion", "config"));
    t.config.upsample =
        upsample_mode_from_string(take<std::string>(c, "upsample", "config"));
    expect_drained(c, "config");

    ordered_json arr = take<ordered_json>(j, "edges", "topology");
    if (!arr.is_array()) throw ParseError("'edges' must be an array");
    int idx = 0;
    for (ordered_json je : arr) {
        const std::string where = "edges[" + std::to_string(idx++) + "]";
        SkipEdge e;
        e.from_stage = take<int>(je, "from_stage", where.c_str());
        e.from_level = take<int>(je, "from_level", where.c_str());
        e.to_stage = take<int>(je, "to_stage", where.c_str());
        e.to_level = take<int>(je, "to_level", where.c_str());
        const std::string dir = take<std::string>(je, "direction", where.c_str());
        if (dir == "forward") {
            e.direction = EdgeDirection::forward;
        } else if (dir == "backward") {
            e.direction = EdgeDirection::backward;
        } else {
            throw ParseError("bad direction '" + dir + "' in " + where);
        }
        expect_drained(je, where.c_str());
        t.edges.push_back(e);
    }
    expect_drained(j, "topology");
    t.canonicalize();
    return t;
}

void save_topology(const Topology& t, const std::string& path) {
    Topology canon = t;
    canon.canonicalize();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw EngineError("cannot open '" + path + "' for writing");
    out << topology_to_json(canon);
}

Topology load_topology(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open topology file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return topology_from_json(ss.str());
}

}  // namespace bix
