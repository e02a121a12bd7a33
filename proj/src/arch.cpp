#include "bix/arch.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

namespace bix {

const char* to_string(ArchKind k) {
    switch (k) {
        case ArchKind::bionet: return "bionet";
        case ArchKind::bionetpp: return "bionetpp";
        case ArchKind::subnet: return "sub";
    }
    return "?";
}

int CompGraph::width(int level) const {
    const double w = flat_width()
                         ? cfg.base_width * cfg.n_mult
                         : cfg.base_width * cfg.n_mult * static_cast<double>(1 << level);
    return std::max(1, static_cast<int>(std::llround(w)));
}

int CompGraph::top_level(int stage) const {
    if (kind == ArchKind::bionet && stage % 2 == 0) return cfg.L - 1;
    return cfg.L;
}

bool CompGraph::block_exists(int stage, int level) const {
    return stage >= 1 && stage <= cfg.stages() && level >= 0 &&
           level <= top_level(stage);
}

bool CompGraph::is_live(int stage, int level) const {
    return block_exists(stage, level) &&
           live_[static_cast<size_t>(stage - 1)][static_cast<size_t>(level)];
}

bool CompGraph::enc_has_backward_slot(int level) const {
    if (kind != ArchKind::bionet || cfg.fusion != FuseMode::concat) return false;
    return level >= cfg.L - cfg.w_back && level < cfg.L;
}

std::string CompGraph::block_key(int stage, int level, ArchKind kind, int L) {
    if (stage % 2 == 1) {
        if (kind == ArchKind::bionet && level == L) return "bridge";
        return "enc.l" + std::to_string(level);
    }
    return "dec.l" + std::to_string(level);
}

namespace {

std::string bn_key(const std::string& unit, int stage) {
    return stage > 0 ? unit + ".bn.s" + std::to_string(stage) : unit + ".bn";
}

}  // namespace

Tensor CompGraph::conv_unit(const Tensor& x, const std::string& key, int stage,
                            bool training) {
    Tensor y = conv2d(x, params.at(key));
    y = batch_norm(y, norms.at(bn_key(key, stage)), training);
    return relu(y);
}

Tensor CompGraph::align_stream(const Tensor& src, int from_level, int to_level,
                               bool to_encoder, int64_t h0, int64_t w0,
                               bool /*training*/) {
    Tensor s = src;
    const int64_t th = h0 >> to_level, tw = w0 >> to_level;
    if (s.dim(2) != th || s.dim(3) != tw) s = bilinear_resize(s, th, tw);
    if (width(from_level) != width(to_level)) {
        const std::string key = std::string("skip.") + (to_encoder ? "enc" : "dec") +
                                ".l" + std::to_string(to_level) + ".s" +
                                std::to_string(from_level);
        s = conv2d(s, params.at(key));
    }
    return s;
}

Tensor CompGraph::run_pre(const Tensor& batch, bool training) {
    if (batch.ndim() != 4 || batch.dim(1) != in_channels) {
        throw ShapeError("expected input [B," + std::to_string(in_channels) +
                         ",H,W], got " + shape_str(batch.shape()));
    }
    const int64_t div = int64_t(1) << cfg.L;
    if (batch.dim(2) % div != 0 || batch.dim(3) % div != 0) {
        throw ShapeError("input spatial size " + shape_str(batch.shape()) +
                         " not divisible by 2^L = " + std::to_string(div));
    }
    Tensor x = conv_unit(batch, "pre.c0", 0, training);
    x = conv_unit(x, "pre.c1", 0, training);
    return conv_unit(x, "pre.c2", 0, training);
}

Tensor CompGraph::run_post(const Tensor& dec0, bool training) {
    Tensor x = conv_unit(dec0, "post.c0", 0, training);
    x = conv_unit(x, "post.c1", 0, training);
    return conv2d(x, params.at("head"));  // raw logits
}

std::vector<Tensor> CompGraph::run_stage(int stage, const std::vector<Tensor>& prev,
                                         const Tensor& x_pre,
                                         const EdgeProvider& edges, bool training) {
    ++stage_forward_count;
    const int L = cfg.L;
    const int64_t h0 = x_pre.dim(2), w0 = x_pre.dim(3);
    std::vector<Tensor> out(static_cast<size_t>(L + 1));
    const bool enc_stage = stage % 2 == 1;
    std::vector<std::vector<int>> srcs;
    if (stage >= 2) {
        srcs = edges(stage - 1);
    } else {
        srcs.assign(static_cast<size_t>(L + 1), {});
    }

    auto combine_skips = [&](int pair, int level,
                             std::vector<Tensor>& streams) -> Tensor {
        if (streams.empty()) return Tensor();
        if (hooks.skip_selector) return hooks.skip_selector(pair, level, streams);
        if (streams.size() == 1) return streams[0];
        return fuse(streams, FuseMode::average);
    };

    if (enc_stage) {
        const int etop = kind == ArchKind::bionet ? L - 1 : L;
        for (int l = 0; l <= etop; ++l) {
            if (!is_live(stage, l)) continue;
            Tensor seq;
            if (l == 0) {
                seq = x_pre;
            } else {
                int k = l - 1;
                while (k >= 0 && !out[static_cast<size_t>(k)].defined()) --k;
                seq = k >= 0 ? out[static_cast<size_t>(k)] : x_pre;
                for (int step = std::max(k, 0); step < l; ++step) seq = max_pool2d(seq);
            }
            const std::string base = "enc.l" + std::to_string(l);
            Tensor u = conv_unit(seq, base + ".a", stage, training);

            std::vector<Tensor> streams;
            if (stage >= 3 && !hooks.zero_backward_streams) {
                for (int from : srcs[static_cast<size_t>(l)]) {
                    if (prev[static_cast<size_t>(from)].defined()) {
                        streams.push_back(align_stream(prev[static_cast<size_t>(from)],
                                                       from, l, true, h0, w0, training));
                    }
                }
            }

            Tensor fused;
            if (cfg.fusion == FuseMode::concat) {
                if (enc_has_backward_slot(l)) {
                    Tensor back;
                    if (hooks.zero_backward_streams) {
                        back = Tensor::zeros(u.shape());
                    } else if (streams.empty()) {
                        back = u;  // first recurrence: duplicate the encoded features
                    } else if (streams.size() == 1) {
                        back = streams[0];
                    } else {
                        throw ContractError("concat fusion takes one backward stream");
                    }
                    fused = fuse({u, back}, FuseMode::concat);
                } else {
                    fused = u;
                }
            } else {
                Tensor skipm = combine_skips(stage - 1, l, streams);
                fused = skipm.defined() ? fuse({u, skipm}, FuseMode::average) : u;
            }
            out[static_cast<size_t>(l)] = conv_unit(fused, base + ".b", stage, training);
        }
        if (kind == ArchKind::bionet && is_live(stage, L)) {
            int k = L - 1;
            while (k >= 0 && !out[static_cast<size_t>(k)].defined()) --k;
            Tensor seq = k >= 0 ? out[static_cast<size_t>(k)] : x_pre;
            for (int step = std::max(k, 0); step < L; ++step) seq = max_pool2d(seq);
            Tensor y = conv_unit(seq, "bridge.c0", stage, training);
            out[static_cast<size_t>(L)] = conv_unit(y, "bridge.c1", stage, training);
        }
        return out;
    }

    // decoder stage
    const int dtop = top_level(stage);
    for (int l = dtop; l >= 0; --l) {
        if (!is_live(stage, l)) continue;
        Tensor seq;
        if (kind == ArchKind::bionet) {
            const int from_lvl = l + 1;
            Tensor src = l == L - 1 ? prev[static_cast<size_t>(L)]
                                    : out[static_cast<size_t>(l + 1)];
            if (src.defined()) {
                if (cfg.upsample == UpsampleMode::transpose) {
                    seq = conv_transpose2d(src, params.at("dec.l" + std::to_string(l) + ".up"));
                } else {
                    seq = bilinear_resize(src, h0 >> l, w0 >> l);
                    if (width(from_lvl) != width(l)) {
                        seq = conv2d(seq, params.at("dec.l" + std::to_string(l) + ".proj"));
                    }
                }
            }
        } else if (l < L) {
            int k = l + 1;
            while (k <= L && !out[static_cast<size_t>(k)].defined()) ++k;
            if (k <= L) {
                seq = bilinear_resize(out[static_cast<size_t>(k)], h0 >> l, w0 >> l);
            }
        }

        std::vector<Tensor> streams;
        for (int from : srcs[static_cast<size_t>(l)]) {
            if (prev[static_cast<size_t>(from)].defined()) {
                streams.push_back(align_stream(prev[static_cast<size_t>(from)], from, l,
                                               false, h0, w0, training));
            }
        }

        Tensor fused;
        if (cfg.fusion == FuseMode::concat) {
            if (!seq.defined() || streams.size() != 1) {
                throw ContractError("concat decoder fusion needs the sequential stream "
                                    "and exactly one forward skip");
            }
            fused = fuse({seq, streams[0]}, FuseMode::concat);
        } else {
            Tensor skipm = combine_skips(stage - 1, l, streams);
            if (seq.defined() && skipm.defined()) {
                fused = fuse({seq, skipm}, FuseMode::average);
            } else if (seq.defined()) {
                fused = seq;
            } else if (skipm.defined()) {
                fused = skipm;
            } else {
                throw ContractError("decoder block with no live inputs at stage " +
                                    std::to_string(stage) + " level " + std::to_string(l));
            }
        }
        const std::string base = "dec.l" + std::to_string(l);
        Tensor y = conv_unit(fused, base + ".a", stage, training);
        out[static_cast<size_t>(l)] = conv_unit(y, base + ".b", stage, training);
    }
    return out;
}

Tensor CompGraph::forward(const Tensor& batch, bool training) {
    Tensor x_pre = run_pre(batch, training);
    EdgeProvider edges = topo_edges();
    std::vector<Tensor> prev;
    for (int s = 1; s <= cfg.stages(); ++s) {
        prev = run_stage(s, prev, x_pre, edges, training);
    }
    if (!prev[0].defined()) {
        throw TopologyError("final decoder output is not live");
    }
    return run_post(prev[0], training);
}

EdgeProvider CompGraph::topo_edges() const {
    auto srcs = std::make_shared<std::vector<std::vector<std::vector<int>>>>(
        topo.pair_sources());
    return [srcs](int pair) { return (*srcs)[static_cast<size_t>(pair - 1)]; };
}

std::vector<Tensor> CompGraph::parameters() const {
    std::vector<Tensor> out;
    for (const auto& [key, p] : params) {
        out.push_back(p.weight);
        out.push_back(p.bias);
    }
    for (const auto& [key, n] : norms) {
        out.push_back(n.gamma);
        out.push_back(n.beta);
    }
    return out;
}

std::vector<std::string> CompGraph::parameter_names() const {
    std::vector<std::string> out;
    for (const auto& [key, p] : params) {
        out.push_back(key + ".weight");
        out.push_back(key + ".bias");
    }
    for (const auto& [key, n] : norms) {
        out.push_back(key + ".gamma");
        out.push_back(key + ".beta");
    }
    return out;
}

void CompGraph::zero_grads() {
    for (Tensor& t : parameters()) t.zero_grad();
}

std::vector<std::string> CompGraph::node_order() const {
    std::vector<std::string> order;
    order.push_back("pre");
    for (int s = 1; s <= cfg.stages(); ++s) {
        if (s % 2 == 1) {
            for (int l = 0; l <= top_level(s); ++l) {
                if (is_live(s, l)) {
                    order.push_back("s" + std::to_string(s) + "." +
                                    block_key(s, l, kind, cfg.L));
                }
            }
        } else {
            for (int l = top_level(s); l >= 0; --l) {
                if (is_live(s, l)) {
                    order.push_back("s" + std::to_string(s) + "." +
                                    block_key(s, l, kind, cfg.L));
                }
            }
        }
    }
    order.push_back("post");
    return order;
}

uint64_t CompGraph::structure_hash() const {
    std::ostringstream os;
    os << to_string(kind) << '|' << cfg.T << '|' << cfg.L << '|' << cfg.n_mult << '|'
       << cfg.w_back << '|' << cfg.base_width << '|' << to_string(cfg.fusion) << '|'
       << to_string(cfg.upsample) << '|' << in_channels << '|' << num_classes;
    for (const SkipEdge& e : topo.edges) {
        os << '|' << e.from_stage << ',' << e.from_level << ',' << e.to_level;
    }
    return hash_tag(os.str());
}

void CompGraph::compute_liveness() {
    const int L = cfg.L;
    const int stages = cfg.stages();
    const int nb = stages * (L + 1);
    auto idx = [&](int s, int l) { return (s - 1) * (L + 1) + l; };

    std::vector<std::vector<int>> succ(static_cast<size_t>(nb));
    std::vector<std::vector<int>> pred(static_cast<size_t>(nb));
    auto link = [&](int a, int b) {
        succ[static_cast<size_t>(a)].push_back(b);
        pred[static_cast<size_t>(b)].push_back(a);
    };

    for (int s = 1; s <= stages; ++s) {
        const int top = top_level(s);
        if (s % 2 == 1) {
            for (int l = 1; l <= top; ++l) link(idx(s, l - 1), idx(s, l));
            if (kind == ArchKind::bionet && s + 1 <= stages) {
                link(idx(s, L), idx(s + 1, L - 1));  // bridge feeds the decoder entry
            }
        } else {
            for (int l = top - 1; l >= 0; --l) link(idx(s, l + 1), idx(s, l));
        }
    }
    for (const SkipEdge& e : topo.edges) {
        if (!block_exists(e.from_stage, e.from_level) ||
            !block_exists(e.to_stage, e.to_level)) {
            throw TopologyError("edge references a nonexistent block (stage " +
                                std::to_string(e.from_stage) + " level " +
                                std::to_string(e.from_level) + " -> stage " +
                                std::to_string(e.to_stage) + " level " +
                                std::to_string(e.to_level) + ")");
        }
        link(idx(e.from_stage, e.from_level), idx(e.to_stage, e.to_level));
    }

    // forward reachability: every encoder entry is grounded at the pre block
    std::vector<char> fwd(static_cast<size_t>(nb), 0);
    std::deque<int> q;
    for (int s = 1; s <= stages; s += 2) {
        fwd[static_cast<size_t>(idx(s, 0))] = 1;
        q.push_back(idx(s, 0));
    }
    while (!q.empty()) {
        int u = q.front();
        q.pop_front();
        for (int v : succ[static_cast<size_t>(u)]) {
            if (!fwd[static_cast<size_t>(v)]) {
                fwd[static_cast<size_t>(v)] = 1;
                q.push_back(v);
            }
        }
    }
    // backward reachability from the post block's sole input
    std::vector<char> bwd(static_cast<size_t>(nb), 0);
    bwd[static_cast<size_t>(idx(stages, 0))] = 1;
    q.push_back(idx(stages, 0));
    while (!q.empty()) {
        int u = q.front();
        q.pop_front();
        for (int v : pred[static_cast<size_t>(u)]) {
            if (!bwd[static_cast<size_t>(v)]) {
                bwd[static_cast<size_t>(v)] = 1;
                q.push_back(v);
            }
        }
    }

    if (!fwd[static_cast<size_t>(idx(stages, 0))]) {
        throw TopologyError("no path from the input to the post-processing block");
    }

    live_.assign(static_cast<size_t>(stages),
                 std::vector<char>(static_cast<size_t>(L + 1), 0));
    for (int s = 1; s <= stages; ++s) {
        for (int l = 0; l <= L; ++l) {
            if (!block_exists(s, l)) continue;
            live_[static_cast<size_t>(s - 1)][static_cast<size_t>(l)] =
                fwd[static_cast<size_t>(idx(s, l))] && bwd[static_cast<size_t>(idx(s, l))];
        }
    }
}

CompGraph build_graph(ArchKind kind, const ArchConfig& cfg, const Topology& topo,
                      int in_channels, int num_classes, uint64_t seed) {
    cfg.validate();
    if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");

    CompGraph g;
    g.kind = kind;
    g.cfg = cfg;
    g.topo = topo;
    g.topo.canonicalize();
    g.in_channels = in_channels;
    g.num_classes = num_classes;
    g.seed = seed;
    g.compute_liveness();

    const int L = cfg.L;
    auto init = [&](const std::string& key) {
        return sub_rng(seed, "init." + key);
    };
    auto add_conv = [&](const std::string& key, int64_t out, int64_t in, int64_t k,
                        int stride, int pad) {
        Rng r = init(key);
        g.params.emplace(key, make_conv_params(out, in, k, k, stride, pad, r));
    };
    auto add_norm = [&](const std::string& unit, int64_t ch, int stage) {
        g.norms.emplace(bn_key(unit, stage), make_batch_norm(ch));
    };
    auto add_unit = [&](const std::string& key, int64_t out, int64_t in,
                        bool recurrent_odd, bool recurrent_even) {
        add_conv(key, out, in, 3, 1, 1);
        if (!recurrent_odd && !recurrent_even) {
            add_norm(key, out, 0);
        } else {
            for (int s = recurrent_odd ? 1 : 2; s <= cfg.stages(); s += 2) {
                add_norm(key, out, s);
            }
        }
    };

    const int w0 = g.width(0);
    add_unit("pre.c0", w0, in_channels, false, false);
    add_unit("pre.c1", w0, w0, false, false);
    add_unit("pre.c2", w0, w0, false, false);

    const int etop = kind == ArchKind::bionet ? L - 1 : L;
    for (int l = 0; l <= etop; ++l) {
        const int w = g.width(l);
        const int win = l == 0 ? w0 : g.width(l - 1);
        add_unit("enc.l" + std::to_string(l) + ".a", w, win, true, false);
        const int bin = g.enc_has_backward_slot(l) ? 2 * w : w;
        add_unit("enc.l" + std::to_string(l) + ".b", w, bin, true, false);
    }
    if (kind == ArchKind::bionet) {
        add_unit("bridge.c0", g.width(L), g.width(L - 1), true, false);
        add_unit("bridge.c1", g.width(L), g.width(L), true, false);
    }

    const int dtop = kind == ArchKind::bionet ? L - 1 : L;
    for (int l = 0; l <= dtop; ++l) {
        const int w = g.width(l);
        const std::string base = "dec.l" + std::to_string(l);
        if (kind == ArchKind::bionet) {
            const int src = g.width(l + 1);
            if (cfg.upsample == UpsampleMode::transpose) {
                Rng r = init(base + ".up");
                g.params.emplace(base + ".up",
                                 make_conv_transpose_params(src, w, 2, 2, r));
            } else if (src != w) {
                add_conv(base + ".proj", w, src, 1, 1, 0);
            }
        }
        const int ain = cfg.fusion == FuseMode::concat ? 2 * w : w;
        add_unit(base + ".a", w, ain, false, true);
        add_unit(base + ".b", w, w, false, true);
    }

    // width-aligning 1x1 projections for cross-level skips
    for (const SkipEdge& e : g.topo.edges) {
        if (g.width(e.from_level) == g.width(e.to_level)) continue;
        const bool to_encoder = e.direction == EdgeDirection::backward;
        const std::string key = std::string("skip.") + (to_encoder ? "enc" : "dec") +
                                ".l" + std::to_string(e.to_level) + ".s" +
                                std::to_string(e.from_level);
        if (!g.params.count(key)) {
            add_conv(key, g.width(e.to_level), g.width(e.from_level), 1, 1, 0);
        }
    }

    add_unit("post.c0", w0, w0, false, false);
    add_unit("post.c1", w0, w0, false, false);
    add_conv("head", num_classes, w0, 1, 1, 0);

    return g;
}

CompGraph build_bionet(const ArchConfig& cfg, int in_channels, int num_classes,
                       uint64_t seed) {
    cfg.validate();
    return build_graph(ArchKind::bionet, cfg, bionet_topology(cfg, "bionet"),
                       in_channels, num_classes, seed);
}

CompGraph build_bionet_pp(const ArchConfig& cfg, int in_channels, int num_classes,
                          uint64_t seed) {
    ArchConfig c = cfg;
    c.fusion = FuseMode::average;      // forced
    c.upsample = UpsampleMode::bilinear;
    c.validate();
    return build_graph(ArchKind::bionetpp, c, dense_topology(c, "bionetpp"),
                       in_channels, num_classes, seed);
}

CompGraph instantiate_subnet(const ArchConfig& supernet_cfg, const Topology& topo,
                             int in_channels, int num_classes, uint64_t seed) {
    ArchConfig c = supernet_cfg;
    c.fusion = FuseMode::average;
    c.upsample = UpsampleMode::bilinear;
    c.validate();
    Topology t = topo;
    t.config = c;
    t.canonicalize();  // TopologyError on out-of-bounds edges
    return build_graph(ArchKind::subnet, c, t, in_channels, num_classes, seed);
}

}  // namespace bix
