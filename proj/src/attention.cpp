#include "convvit/attention.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

namespace convvit {

namespace {

int isqrt_exact(int n) {
    const int r = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
    return r * r == n ? r : -1;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const int n = a.extent(0), k = a.extent(1), m = b.extent(1);
    if (b.extent(0) != k) throw dimension_error("matmul: inner extents differ");
    Tensor out({n, m});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
            double acc = 0.0;
            for (int l = 0; l < k; ++l) acc += a.at(i, l) * b.at(l, j);
            out.at(i, j) = acc;
        }
    }
    return out;
}

} // namespace

Tensor project_tokens(const QkvProjection& proj, const Tensor& x) {
    const int t = x.extent(0), h = x.extent(1), w = x.extent(2);
    Tensor raw = proj.shared ? shared_forward(proj.shared_bank, x)
                             : unshared_forward(proj.unshared_bank, x);
    if (proj.padding() == Padding::Valid) {
        // [T*h*w, 1, 1] -> [T, h, w]
        return raw.reshape({t, h, w});
    }
    if (raw.extent(0) != t) {
        throw config_error("project_tokens: same-padded projection must keep one channel per token");
    }
    return raw;
}

void init_attention_geometry(ConvAttentionLayer& layer, int heads, int token_h, int token_w) {
    const int grid = heads == 1 ? 1 : isqrt_exact(heads);
    if (grid < 1) throw config_error("attention: head count must be 1 or a perfect square");
    if (token_h % grid != 0 || token_w % grid != 0) {
        throw config_error("attention: head grid must tile the token matrix");
    }
    layer.heads = heads;
    layer.token_h = token_h;
    layer.token_w = token_w;
    layer.head_h = token_h / grid;
    layer.head_w = token_w / grid;
    layer.scale_dim = static_cast<double>(layer.head_h) * layer.head_w;
}

std::vector<Tensor> split_heads(const Tensor& x, int heads) {
    if (x.rank() != 3) throw dimension_error("split_heads: input must be [T,H,W]");
    const int t = x.extent(0), th = x.extent(1), tw = x.extent(2);
    const int grid = heads == 1 ? 1 : isqrt_exact(heads);
    if (grid < 1) throw config_error("split_heads: head count must be 1 or a perfect square");
    if (th % grid != 0 || tw % grid != 0) {
        throw config_error("split_heads: head grid must tile the token matrix");
    }
    const int h = th / grid, w = tw / grid;

    std::vector<Tensor> parts;
    parts.reserve(static_cast<std::size_t>(heads));
    for (int r = 0; r < grid; ++r) {
        for (int c = 0; c < grid; ++c) {
            Tensor part({t, h, w}, x.precision());
            for (int tk = 0; tk < t; ++tk) {
                for (int i = 0; i < h; ++i) {
                    for (int j = 0; j < w; ++j) {
                        part.at(tk, i, j) = x.at(tk, r * h + i, c * w + j);
                    }
                }
            }
            parts.push_back(std::move(part));
        }
    }
    return parts;
}

Tensor merge_heads(const std::vector<Tensor>& parts, int token_h, int token_w) {
    if (parts.empty()) throw dimension_error("merge_heads: no parts");
    const int heads = static_cast<int>(parts.size());
    const int grid = heads == 1 ? 1 : isqrt_exact(heads);
    if (grid < 1) throw config_error("merge_heads: head count must be 1 or a perfect square");
    const int t = parts[0].extent(0);
    const int h = parts[0].extent(1), w = parts[0].extent(2);
    if (h * grid != token_h || w * grid != token_w) {
        throw dimension_error("merge_heads: parts do not tile the token matrix");
    }

    Tensor out({t, token_h, token_w}, parts[0].precision());
    for (int r = 0; r < grid; ++r) {
        for (int c = 0; c < grid; ++c) {
            const Tensor& part = parts[static_cast<std::size_t>(r * grid + c)];
            for (int tk = 0; tk < t; ++tk) {
                for (int i = 0; i < h; ++i) {
                    for (int j = 0; j < w; ++j) {
                        out.at(tk, r * h + i, c * w + j) = part.at(tk, i, j);
                    }
                }
            }
        }
    }
    return out;
}

Tensor attention_scores(const Tensor& q, const Tensor& k, double d) {
    if (!q.same_shape(k)) throw dimension_error("attention_scores: Q and K must match");
    const int t = q.extent(0), h = q.extent(1), w = q.extent(2);
    const double inv = 1.0 / std::sqrt(d);

    // Each query token convolved (valid, full extent) with every key token.
    const Tensor key_bank = k.reshape({t, 1, h, w});
    Tensor scores({t, t}, combine_precision(q.precision(), k.precision()));
    for (int i = 0; i < t; ++i) {
        Tensor query = Tensor::from_data({1, h, w},
                                         std::vector<double>(q.data() + static_cast<std::int64_t>(i) * h * w,
                                                             q.data() + static_cast<std::int64_t>(i + 1) * h * w),
                                         q.precision());
        Tensor row = conv2d(query, key_bank, Padding::Valid, 1); // [T,1,1]
        for (int j = 0; j < t; ++j) scores.at(i, j) = row[j] * inv;
    }
    scores.quantize();
    return scores;
}

Tensor weighted_values(const Tensor& a, const Tensor& v) {
    if (a.rank() != 2 || a.extent(1) != v.extent(0)) {
        throw dimension_error("weighted_values: scores [T,T] must match value channels");
    }
    const int t = v.extent(0);
    return conv2d(v, a.reshape({a.extent(0), t, 1, 1}), Padding::Valid, 1);
}

Tensor conv_mhsa_forward(const ConvAttentionLayer& layer, const Tensor& x, AttentionTrace* trace) {
    if (x.rank() != 3 || x.extent(1) != layer.token_h || x.extent(2) != layer.token_w) {
        throw dimension_error("conv_mhsa_forward: input geometry mismatch");
    }
    const int t = x.extent(0);
    std::vector<Tensor> parts = split_heads(x, layer.heads);
    if (trace) {
        trace->scores = Tensor({layer.heads, t, t}, x.precision());
    }

    std::vector<Tensor> outputs;
    outputs.reserve(parts.size());
    for (int head = 0; head < layer.heads; ++head) {
        const Tensor& xs = parts[static_cast<std::size_t>(head)];
        const Tensor q = project_tokens(layer.wq, xs);
        const Tensor k = project_tokens(layer.wk, xs);
        const Tensor v = project_tokens(layer.wv, xs);
        const Tensor s = attention_scores(q, k, layer.scale_dim);
        const Tensor a = softmax(s, 1);
        if (trace) {
            std::copy(a.data(), a.data() + a.size(),
                      trace->scores.data() + static_cast<std::int64_t>(head) * t * t);
        }
        outputs.push_back(weighted_values(a, v));
    }
    return merge_heads(outputs, layer.token_h, layer.token_w);
}

Tensor reference_mhsa(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                      int heads) {
    if (x.rank() != 2) throw dimension_error("reference_mhsa: input must be [T,D]");
    const int t = x.extent(0), dim = x.extent(1);
    if (wq.rank() != 2 || wq.extent(0) != dim || wq.extent(1) != dim ||
        !wq.same_shape(wk) || !wq.same_shape(wv)) {
        throw dimension_error("reference_mhsa: projections must be [D,D]");
    }
    if (dim % heads != 0) throw config_error("reference_mhsa: heads must divide D");
    const int d = dim / heads;
    const double inv = 1.0 / std::sqrt(static_cast<double>(d));

    const Tensor q = matmul(x, wq);
    const Tensor k = matmul(x, wk);
    const Tensor v = matmul(x, wv);

    Tensor out({t, dim});
    for (int head = 0; head < heads; ++head) {
        const int off = head * d;
        Tensor s({t, t});
        for (int i = 0; i < t; ++i) {
            for (int j = 0; j < t; ++j) {
                double acc = 0.0;
                for (int l = 0; l < d; ++l) acc += q.at(i, off + l) * k.at(j, off + l);
                s.at(i, j) = acc * inv;
            }
        }
        const Tensor a = softmax(s, 1);
        for (int i = 0; i < t; ++i) {
            for (int l = 0; l < d; ++l) {
                double acc = 0.0;
                for (int j = 0; j < t; ++j) acc += a.at(i, j) * v.at(j, off + l);
                out.at(i, off + l) = acc;
            }
        }
    }
    return out;
}

std::vector<int> head_permutation(int heads, int token_h, int token_w) {
    const int grid = heads == 1 ? 1 : isqrt_exact(heads);
    if (grid < 1) throw config_error("head_permutation: head count must be 1 or a perfect square");
    const int h = token_h / grid, w = token_w / grid;
    const int d = h * w;
    std::vector<int> perm(static_cast<std::size_t>(token_h) * token_w);
    for (int i = 0; i < token_h; ++i) {
        for (int j = 0; j < token_w; ++j) {
            const int r = i / h, c = j / w;
            const int head = r * grid + c;
            const int m = (i - r * h) * w + (j - c * w);
            perm[static_cast<std::size_t>(i) * token_w + j] = head * d + m;
        }
    }
    return perm;
}

Tensor embed_reference_weights(const Tensor& bank, int heads, int token_h, int token_w) {
    const int m_out = bank.extent(0);
    const int h = bank.extent(2), w = bank.extent(3);
    const int dim = token_h * token_w;
    const std::vector<int> perm = head_permutation(heads, token_h, token_w);

    // Column block of head k reads exactly head k's sub-patch, with the same
    // bank weights in every block.
    Tensor ref = Tensor::zeros({dim, dim});
    for (int f = 0; f < dim; ++f) {
        const int head = perm[static_cast<std::size_t>(f)] / (h * w);
        const int m_in = perm[static_cast<std::size_t>(f)] % (h * w);
        for (int mo = 0; mo < m_out; ++mo) {
            ref.at(f, head * m_out + mo) = bank.at(mo, 0, m_in / w, m_in % w);
        }
    }
    return ref;
}

namespace {

// Extracts the shared bank behind one reference matrix, checking the
// tied-block structure on the way.
Tensor extract_bank(const Tensor& ref, int heads, int token_h, int token_w,
                    const std::vector<int>& perm) {
    const int grid = heads == 1 ? 1 : isqrt_exact(heads);
    const int h = token_h / grid, w = token_w / grid;
    const int d = h * w;

    Tensor bank({d, 1, h, w});
    for (int f = 0; f < token_h * token_w; ++f) {
        const int head = perm[static_cast<std::size_t>(f)] / d;
        const int m_in = perm[static_cast<std::size_t>(f)] % d;
        for (int col = 0; col < token_h * token_w; ++col) {
            const int col_head = col / d;
            const int m_out = col % d;
            const double v = ref.at(f, col);
            if (col_head != head) {
                if (v != 0.0) {
                    throw config_error(
                        "transport_weights: reference weight couples distinct heads; "
                        "no bijective bank mapping exists");
                }
                continue;
            }
            double& slot = bank.at(m_out, 0, m_in / w, m_in % w);
            if (head == 0) {
                slot = v;
            } else if (slot != v) {
                throw config_error(
                    "transport_weights: head blocks differ; shared bank cannot represent them");
            }
        }
    }
    return bank;
}

} // namespace

ConvAttentionLayer transport_weights(const Tensor& wq, const Tensor& wk, const Tensor& wv,
                                     int heads, int token_h, int token_w) {
    const int dim = token_h * token_w;
    if (wq.rank() != 2 || wq.extent(0) != dim || wq.extent(1) != dim ||
        !wq.same_shape(wk) || !wq.same_shape(wv)) {
        throw dimension_error("transport_weights: projections must be [H*W, H*W]");
    }

    ConvAttentionLayer layer;
    init_attention_geometry(layer, heads, token_h, token_w);
    const std::vector<int> perm = head_permutation(heads, token_h, token_w);

    auto make_proj = [&](const Tensor& ref) {
        QkvProjection proj;
        proj.shared = true;
        proj.shared_bank.kernels = extract_bank(ref, heads, token_h, token_w, perm);
        proj.shared_bank.group_size = 1;
        proj.shared_bank.padding = Padding::Valid;
        return proj;
    };
    layer.wq = make_proj(wq);
    layer.wk = make_proj(wk);
    layer.wv = make_proj(wv);
    return layer;
}

void export_trace_csv(const AttentionTrace& trace, const std::string& path) {
    if (trace.scores.rank() != 3) throw state_error("export_trace_csv: trace not collected");
    std::ofstream out(path);
    if (!out) throw io_error("cannot open " + path);
    const int heads = trace.scores.extent(0);
    const int t = trace.scores.extent(1);
    char buf[32];
    for (int head = 0; head < heads; ++head) {
        for (int i = 0; i < t; ++i) {
            for (int j = 0; j < t; ++j) {
                std::snprintf(buf, sizeof(buf), "%.17g", trace.scores.at(head, i, j));
                out << buf << (j + 1 < t ? "," : "");
            }
            out << "\n";
        }
    }
}

} // namespace convvit
