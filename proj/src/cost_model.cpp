#include "bix/cost_model.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <json.hpp>

namespace bix {

namespace {

constexpr const char* kConventions =
    "conv=out*in*k*k/elem bias-free; transpose=in*out*k*k per input elem; "
    "norm=2/elem; resize=4/elem (0 if pass-through); pool=1/elem; "
    "average(k)=k/elem (0 if k=1); concat/relu=0; batch=1; shared conv "
    "parameters attributed to their first live instance";

// Owner block of a parameter key ("enc.l2.a" -> "enc.l2").
std::string owner_of(const std::string& key) {
    if (key.rfind("pre.", 0) == 0) return "pre";
    if (key.rfind("post.", 0) == 0 || key == "head") return "post";
    if (key.rfind("bridge.", 0) == 0) return "bridge";
    if (key.rfind("skip.", 0) == 0) return key;
    // enc.lN.x / dec.lN.x -> strip the unit suffix
    const size_t dot = key.rfind('.');
    return key.substr(0, dot);
}

bool owner_live(const CompGraph& g, const std::string& owner) {
    if (owner == "pre" || owner == "post") return true;
    if (owner == "bridge") {
        for (int s = 1; s <= g.cfg.stages(); s += 2) {
            if (g.is_live(s, g.cfg.L)) return true;
        }
        return false;
    }
    if (owner.rfind("skip.", 0) == 0) {
        // alive iff some edge of this shape targets a live block
        const bool to_enc = owner.rfind("skip.enc.", 0) == 0;
        const size_t lpos = owner.find(".l") + 2;
        const size_t spos = owner.find(".s", lpos);
        const int to_level = std::stoi(owner.substr(lpos, spos - lpos));
        const int from_level = std::stoi(owner.substr(spos + 2));
        for (const SkipEdge& e : g.topo.edges) {
            const bool enc_target = e.direction == EdgeDirection::backward;
            if (enc_target == to_enc && e.to_level == to_level &&
                e.from_level == from_level && g.is_live(e.to_stage, e.to_level)) {
                return true;
            }
        }
        return false;
    }
    const bool enc = owner.rfind("enc.", 0) == 0;
    const int level = std::stoi(owner.substr(owner.find(".l") + 2));
    for (int s = enc ? 1 : 2; s <= g.cfg.stages(); s += 2) {
        if (g.is_live(s, level)) return true;
    }
    return false;
}

// norm key -> (unit owner, stage instance); stage 0 for pre/post instances
std::pair<std::string, int> norm_instance(const std::string& key) {
    const size_t bn = key.rfind(".bn");
    const std::string unit = key.substr(0, bn);
    int stage = 0;
    const size_t spos = key.find(".s", bn);
    if (spos != std::string::npos) stage = std::stoi(key.substr(spos + 2));
    return {owner_of(unit), stage};
}

bool norm_live(const CompGraph& g, const std::string& owner, int stage) {
    if (owner == "pre" || owner == "post") return true;
    if (owner == "bridge") return g.is_live(stage, g.cfg.L);
    const int level = std::stoi(owner.substr(owner.find(".l") + 2));
    return g.is_live(stage, level);
}

int64_t extents_product(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

}  // namespace

int64_t count_params_conv(const CompGraph& g) {
    int64_t total = 0;
    for (const auto& [key, p] : g.params) {
        if (owner_live(g, owner_of(key))) total += p.param_count();
    }
    return total;
}

int64_t count_params_norm(const CompGraph& g) {
    int64_t total = 0;
    for (const auto& [key, n] : g.norms) {
        const auto [owner, stage] = norm_instance(key);
        if (norm_live(g, owner, stage)) total += n.param_count();
    }
    return total;
}

int64_t count_params(const CompGraph& g) {
    return count_params_conv(g) + count_params_norm(g);
}

int64_t count_params_raw_walk(const CompGraph& g) {
    int64_t total = 0;
    for (const auto& [key, p] : g.params) {
        if (!owner_live(g, owner_of(key))) continue;
        total += extents_product(p.weight.shape());
        total += extents_product(p.bias.shape());
    }
    for (const auto& [key, n] : g.norms) {
        const auto [owner, stage] = norm_instance(key);
        if (!norm_live(g, owner, stage)) continue;
        total += extents_product(n.gamma.shape());
        total += extents_product(n.beta.shape());
    }
    return total;
}

namespace {

// Mirrors the executor's structure to cost one stage-instance block.
struct MacWalker {
    const CompGraph& g;
    int64_t H, W;
    std::vector<std::vector<std::vector<int>>> srcs;  // [pair-1][to_level]
    std::vector<CostItem> items;
    std::set<std::string> counted_params;

    int64_t h(int l) const { return H >> l; }
    int64_t w(int l) const { return W >> l; }
    int64_t el(int l) const { return int64_t(g.width(l)) * h(l) * w(l); }

    CostItem& item(const std::string& name) {
        items.push_back({name, 0, 0});
        return items.back();
    }

    int64_t conv_macs(const std::string& key, int64_t spatial) {
        return extents_product(g.params.at(key).weight.shape()) * spatial;
    }

    void add_params(CostItem& it, const std::string& key) {
        if (counted_params.insert(key).second) {
            it.params += g.params.at(key).param_count();
        }
    }

    void add_norm(CostItem& it, const std::string& unit, int stage, int level) {
        const std::string key =
            stage > 0 ? unit + ".bn.s" + std::to_string(stage) : unit + ".bn";
        it.params += g.norms.at(key).param_count();
        it.macs += 2 * int64_t(g.width(level)) * h(level) * w(level);
    }

    void unit(CostItem& it, const std::string& key, int stage, int level) {
        it.macs += conv_macs(key, h(level) * w(level));
        add_params(it, key);
        add_norm(it, key, stage, level);
    }

    // aligned skip streams arriving at (stage, level): resize + projection
    int64_t skip_cost(CostItem& it, int pair, int level) {
        const auto& from_levels = srcs[static_cast<size_t>(pair - 1)][static_cast<size_t>(level)];
        int64_t k = 0;
        for (int from : from_levels) {
            // a selected edge's source is always live when the target is
            if (from != level) it.macs += 4 * int64_t(g.width(from)) * h(level) * w(level);
            if (g.width(from) != g.width(level)) {
                const bool to_enc = pair % 2 == 0;
                const std::string key = std::string("skip.") + (to_enc ? "enc" : "dec") +
                                        ".l" + std::to_string(level) + ".s" +
                                        std::to_string(from);
                it.macs += conv_macs(key, h(level) * w(level));
                add_params(it, key);
            }
            ++k;
        }
        return k;
    }

    void average_fusion(CostItem& it, int level, int64_t k, bool has_seq) {
        if (k >= 2) it.macs += k * el(level);          // combine the skips
        if (k >= 1 && has_seq) it.macs += 2 * el(level);  // fold in the sequential
    }

    void walk() {
        srcs = g.topo.pair_sources();
        const int L = g.cfg.L;
        const int w0 = g.width(0);

        CostItem& pre = item("pre");
        pre.macs += int64_t(w0) * g.in_channels * 9 * H * W;
        add_params(pre, "pre.c0");
        add_norm(pre, "pre.c0", 0, 0);
        for (const char* key : {"pre.c1", "pre.c2"}) {
            pre.macs += conv_macs(key, H * W);
            add_params(pre, key);
            add_norm(pre, key, 0, 0);
        }

        for (int s = 1; s <= g.cfg.stages(); ++s) {
            const bool enc = s % 2 == 1;
            if (enc) {
                const int etop = g.kind == ArchKind::bionet ? L - 1 : L;
                int last_live = -1;  // -1 means the pre features
                for (int l = 0; l <= etop; ++l) {
                    if (!g.is_live(s, l)) continue;
                    CostItem& it = item("s" + std::to_string(s) + ".enc.l" + std::to_string(l));
                    if (l > 0) {
                        const int src_w = last_live >= 0 ? g.width(last_live) : w0;
                        for (int step = std::max(last_live, 0); step < l; ++step) {
                            it.macs += int64_t(src_w) * h(step + 1) * w(step + 1);
                        }
                    }
                    const std::string base = "enc.l" + std::to_string(l);
                    unit(it, base + ".a", s, l);
                    int64_t k = 0;
                    if (s >= 3) k = skip_cost(it, s - 1, l);
                    if (g.cfg.fusion == FuseMode::average) {
                        average_fusion(it, l, k, /*has_seq=*/true);
                    }
                    unit(it, base + ".b", s, l);
                    last_live = l;
                }
                if (g.kind == ArchKind::bionet && g.is_live(s, L)) {
                    CostItem& it = item("s" + std::to_string(s) + ".bridge");
                    const int src_w = last_live >= 0 ? g.width(last_live) : w0;
                    for (int step = std::max(last_live, 0); step < L; ++step) {
                        it.macs += int64_t(src_w) * h(step + 1) * w(step + 1);
                    }
                    unit(it, "bridge.c0", s, L);
                    unit(it, "bridge.c1", s, L);
                }
            } else {
                const int dtop = g.top_level(s);
                int last_live = -1;  // nearest live level above, -1 = none yet
                for (int l = dtop; l >= 0; --l) {
                    if (!g.is_live(s, l)) continue;
                    CostItem& it = item("s" + std::to_string(s) + ".dec.l" + std::to_string(l));
                    bool has_seq = false;
                    const std::string base = "dec.l" + std::to_string(l);
                    if (g.kind == ArchKind::bionet) {
                        const bool src_live =
                            l == L - 1 ? g.is_live(s - 1, L) : g.is_live(s, l + 1);
                        if (src_live) {
                            has_seq = true;
                            if (g.cfg.upsample == UpsampleMode::transpose) {
                                it.macs += conv_macs(base + ".up", h(l + 1) * w(l + 1));
                                add_params(it, base + ".up");
                            } else {
                                it.macs += 4 * int64_t(g.width(l + 1)) * h(l) * w(l);
                                if (g.width(l + 1) != g.width(l)) {
                                    it.macs += conv_macs(base + ".proj", h(l) * w(l));
                                    add_params(it, base + ".proj");
                                }
                            }
                        }
                    } else if (last_live >= 0) {
                        has_seq = true;
                        it.macs += 4 * int64_t(g.width(last_live)) * h(l) * w(l);
                    }
                    const int64_t k = skip_cost(it, s - 1, l);
                    if (g.cfg.fusion == FuseMode::average) {
                        average_fusion(it, l, k, has_seq);
                    }
                    unit(it, base + ".a", s, l);
                    unit(it, base + ".b", s, l);
                    last_live = l;
                }
            }
        }

        CostItem& post = item("post");
        for (const char* key : {"post.c0", "post.c1"}) {
            post.macs += conv_macs(key, H * W);
            add_params(post, key);
            add_norm(post, key, 0, 0);
        }
        post.macs += conv_macs("head", H * W);
        add_params(post, "head");
    }
};

}  // namespace

int64_t count_macs(const CompGraph& g, int64_t input_h, int64_t input_w) {
    const int64_t div = int64_t(1) << g.cfg.L;
    if (input_h % div != 0 || input_w % div != 0) {
        throw ShapeError("count_macs: input size not divisible by 2^L");
    }
    MacWalker walker{g, input_h, input_w};
    walker.walk();
    int64_t total = 0;
    for (const CostItem& it : walker.items) total += it.macs;
    return total;
}

CostReport cost_report(const CompGraph& g, int64_t input_h, int64_t input_w) {
    const int64_t div = int64_t(1) << g.cfg.L;
    if (input_h % div != 0 || input_w % div != 0) {
        throw ShapeError("cost_report: input size not divisible by 2^L");
    }
    CostReport r;
    r.arch = to_string(g.kind);
    r.config = g.cfg;
    r.input_c = g.in_channels;
    r.input_h = input_h;
    r.input_w = input_w;
    r.params_conv = count_params_conv(g);
    r.params_norm = count_params_norm(g);
    r.params_total = r.params_conv + r.params_norm;
    r.conventions = kConventions;

    MacWalker walker{g, input_h, input_w};
    walker.walk();
    r.breakdown = std::move(walker.items);
    for (const CostItem& it : r.breakdown) r.macs += it.macs;

    int64_t bd_params = 0;
    for (const CostItem& it : r.breakdown) bd_params += it.params;
    if (bd_params != r.params_total || count_params_raw_walk(g) != r.params_total) {
        throw ContractError("cost report internal mismatch: breakdown " +
                            std::to_string(bd_params) + " vs total " +
                            std::to_string(r.params_total));
    }
    return r;
}

std::string cost_report_json(const CostReport& r) {
    nlohmann::ordered_json j;
    j["schema"] = 1;
    j["arch"] = r.arch;
    nlohmann::ordered_json c;
    c["T"] = r.config.T;
    c["L"] = r.config.L;
    c["N_mult"] = r.config.n_mult;
    c["W_back"] = r.config.w_back;
    c["base_width"] = r.config.base_width;
    c["fusion"] = to_string(r.config.fusion);
    c["upsample"] = to_string(r.config.upsample);
    j["config"] = c;
    j["input"] = {{"c", r.input_c}, {"h", r.input_h}, {"w", r.input_w}};
    j["conventions"] = r.conventions;
    j["params"] = {{"conv", r.params_conv},
                   {"norm", r.params_norm},
                   {"total", r.params_total}};
    j["macs"] = r.macs;

    // reference complexity figures at the canonical configuration
    if (r.config.L == 4 && r.config.T == 3 && r.config.base_width == 32 &&
        r.config.n_mult == 1.0) {
        double ref_params = 0, ref_macs = 0;
        if (r.arch == std::string("bionet")) {
            ref_params = 14.99e6;
            ref_macs = 115.67e9;
        } else {
            ref_params = 0.43e6;
            ref_macs = 34.36e9;
        }
        nlohmann::ordered_json ref;
        ref["reported_params"] = ref_params;
        ref["params_deviation"] =
            static_cast<double>(r.params_total) / ref_params - 1.0;
        if (r.input_h == 512 && r.input_w == 512 && r.input_c == 3) {
            ref["reported_macs"] = ref_macs;
            ref["macs_deviation"] = static_cast<double>(r.macs) / ref_macs - 1.0;
        }
        j["reference"] = ref;
    }

    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const CostItem& it : r.breakdown) {
        arr.push_back({{"block", it.block}, {"params", it.params}, {"macs", it.macs}});
    }
    j["breakdown"] = arr;
    return j.dump(2) + "\n";
}

std::string cost_report_table(const CostReport& r) {
    std::ostringstream os;
    os << "arch: " << r.arch << "  (T=" << r.config.T << " L=" << r.config.L
       << " base=" << r.config.base_width << " N=" << r.config.n_mult
       << " fusion=" << to_string(r.config.fusion) << " up="
       << to_string(r.config.upsample) << ")\n";
    os << "input: " << r.input_c << "x" << r.input_h << "x" << r.input_w << "\n";
    os << "conventions: " << r.conventions << "\n";
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%-16s %14s %18s\n", "block", "params", "macs");
    os << buf;
    for (const CostItem& it : r.breakdown) {
        std::snprintf(buf, sizeof(buf), "%-16s %14lld %18lld\n", it.block.c_str(),
                      static_cast<long long>(it.params), static_cast<long long>(it.macs));
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "%-16s %14lld %18lld\n", "total",
                  static_cast<long long>(r.params_total), static_cast<long long>(r.macs));
    os << buf;
    os << "params split: conv " << r.params_conv << " + norm " << r.params_norm << "\n";
    return os.str();
}

BigInt search_space_size(int N, int L, int T) {
    if (N < 3) throw DomainError("search_space_size requires N >= 3");
    if (L < 1 || T < 1) throw DomainError("search_space_size requires L, T >= 1");
    const unsigned exponent = static_cast<unsigned>(L) * (2 * static_cast<unsigned>(T) - 1);
    BigInt total = 0;
    for (int k = 1; k <= N - 2; ++k) {
        BigInt choose = 1;
        for (int i = 0; i < k; ++i) {
            choose *= N - i;
            choose /= i + 1;
        }
        BigInt term = 1;
        for (unsigned e = 0; e < exponent; ++e) term *= choose;
        total += term;
    }
    return total;
}

int64_t conventional_search_cost(int T, int64_t P_size, int64_t I_F, int64_t I_B) {
    return 2 * static_cast<int64_t>(T) * P_size * (I_F + I_B);
}

int64_t progressive_search_cost(int T, int64_t P_size, int64_t I_F, int64_t I_B) {
    int64_t total = I_B;
    for (int64_t t = 1; t <= 2 * static_cast<int64_t>(T) - 1; ++t) {
        total += t * I_F + (2 * static_cast<int64_t>(T) - t) * I_F * P_size;
    }
    return total;
}

}  // namespace bix
