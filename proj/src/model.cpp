#include "folkvae/model.hpp"
#include "folkvae/dataset_io.hpp"
#include "folkvae/error.hpp"
#include "folkvae/kernels.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace folkvae::model {

namespace k = folkvae::kernels;
using nlohmann::json;

// --- config ------------------------------------------------------------------

void ModelConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v <= 0) throw config_error(std::string("model config: ") + name + " must be > 0");
    };
    positive(seq_len, "seq_len");
    positive(hidden, "hidden");
    positive(style_dim, "style_dim");
    positive(content_dim, "content_dim");
    positive(encoder_layers, "encoder_layers");
    positive(decoder_layers, "decoder_layers");
    positive(pos_dim, "pos_dim");
    if (!one_hot_input) positive(embed_dim, "embed_dim");
    positive(pitch_vocab, "pitch_vocab");
    positive(interval_vocab, "interval_vocab");
    positive(rhythm_vocab, "rhythm_vocab");
    positive(n_regions, "n_regions");
}

// --- arena ---------------------------------------------------------------------

int ParamArena::add(std::string name, int rows, int cols, ParamGroup group) {
    if (frozen_) throw model_error("ParamArena::add after freeze");
    ParamInfo info{std::move(name), rows, cols, total_, group};
    total_ += info.count();
    infos_.push_back(std::move(info));
    return int(infos_.size()) - 1;
}

void ParamArena::freeze() {
    values_.assign(total_, 0.0);
    frozen_ = true;
}

std::vector<std::pair<size_t, size_t>> ParamArena::group_ranges(ParamGroup g) const {
    std::vector<std::pair<size_t, size_t>> out;
    for (const auto& info : infos_) {
        if (info.group != g) continue;
        if (!out.empty() && out.back().second == info.offset)
            out.back().second = info.offset + info.count();
        else
            out.emplace_back(info.offset, info.offset + info.count());
    }
    return out;
}

// --- latents -------------------------------------------------------------------

bool LatentBundle::all_finite() const {
    for (const Latent* l : {&ps, &pc, &rs, &rc}) {
        for (const auto* v : {&l->mu, &l->logvar, &l->z})
            for (double x : *v)
                if (!std::isfinite(x)) return false;
    }
    return true;
}

LatentNoise LatentNoise::zero(const ModelConfig& cfg) {
    LatentNoise n;
    n.ps.assign(size_t(cfg.style_dim), 0.0);
    n.rs.assign(size_t(cfg.style_dim), 0.0);
    n.pc.assign(size_t(cfg.content_dim), 0.0);
    n.rc.assign(size_t(cfg.content_dim), 0.0);
    return n;
}

LatentNoise LatentNoise::gaussian(const ModelConfig& cfg, Rng& rng) {
    LatentNoise n = zero(cfg);
    for (auto* v : {&n.ps, &n.pc, &n.rs, &n.rc})
        for (auto& x : *v) x = rng.gaussian();
    return n;
}

namespace {

std::vector<double> concat2(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

} // namespace

std::vector<double> pitch_latent(const LatentBundle& b) { return concat2(b.ps.z, b.pc.z); }
std::vector<double> rhythm_latent(const LatentBundle& b) { return concat2(b.rs.z, b.rc.z); }
std::vector<double> style_latent(const LatentBundle& b) { return concat2(b.ps.z, b.rs.z); }
std::vector<double> content_latent(const LatentBundle& b) { return concat2(b.pc.z, b.rc.z); }
std::vector<double> melody_latent(const LatentBundle& b) {
    return concat2(concat2(b.ps.z, b.pc.z), concat2(b.rs.z, b.rc.z));
}

// --- construction ----------------------------------------------------------------

MelodyVae::MelodyVae(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const int H = cfg_.hidden;
    const int S = cfg_.style_dim;
    const int C = cfg_.content_dim;

    if (!cfg_.one_hot_input) {
        emb_pitch_ = {arena_.add("emb.pitch", cfg_.pitch_vocab, cfg_.embed_dim, ParamGroup::Vae),
                      cfg_.pitch_vocab, cfg_.embed_dim};
        emb_interval_ = {arena_.add("emb.interval", cfg_.interval_vocab, cfg_.embed_dim, ParamGroup::Vae),
                         cfg_.interval_vocab, cfg_.embed_dim};
        emb_rhythm_ = {arena_.add("emb.rhythm", cfg_.rhythm_vocab, cfg_.embed_dim, ParamGroup::Vae),
                       cfg_.rhythm_vocab, cfg_.embed_dim};
    } else {
        emb_pitch_ = {-1, cfg_.pitch_vocab, cfg_.pitch_vocab};
        emb_interval_ = {-1, cfg_.interval_vocab, cfg_.interval_vocab};
        emb_rhythm_ = {-1, cfg_.rhythm_vocab, cfg_.rhythm_vocab};
    }

    int in = cfg_.input_width();
    for (int b = 0; b < cfg_.encoder_layers; ++b) {
        const std::string base = "enc.block" + std::to_string(b);
        EncBlockP blk;
        blk.in = in;
        blk.fw = add_gru(base + ".fw", in, H);
        blk.bw = add_gru(base + ".bw", in, H);
        if (in != 2 * H)
            blk.wskip = arena_.add(base + ".skip.w", 2 * H, in, ParamGroup::Vae);
        enc_blocks_.push_back(blk);
        in = 2 * H;
    }

    const char* latent_names[4] = {"ps", "pc", "rs", "rc"};
    const int latent_dims[4] = {S, C, S, C};
    for (int i = 0; i < 4; ++i) {
        const std::string base = std::string("head.") + latent_names[i];
        head_mu_[i] = add_linear(base + ".mu", latent_dims[i], 2 * H, ParamGroup::Vae);
        head_lv_[i] = add_linear(base + ".lv", latent_dims[i], 2 * H, ParamGroup::Vae);
    }

    const int e_p = cfg_.stream_embed_width(cfg_.pitch_vocab);
    const int e_i = cfg_.stream_embed_width(cfg_.interval_vocab);
    const int e_r = cfg_.stream_embed_width(cfg_.rhythm_vocab);
    const int ar_p = cfg_.autoregressive ? e_p : 0;
    const int ar_r = cfg_.autoregressive ? e_r : 0;
    const int ar_m = cfg_.autoregressive ? e_p + e_i + e_r : 0;

    dec_pitch_ = add_decoder("dec.pitch", S + C, cfg_.pitch_vocab, ar_p);
    dec_rhythm_ = add_decoder("dec.rhythm", S + C, cfg_.rhythm_vocab, ar_r);
    dec_melody_ = add_decoder("dec.melody", 2 * (S + C), cfg_.melody_width(), ar_m);

    cls_style_ = add_linear("cls.style", cfg_.n_regions, 2 * S, ParamGroup::StyleClassifier);
    cls_adversary_ = add_linear("cls.adversary", cfg_.n_regions, 2 * C, ParamGroup::AdversaryClassifier);

    arena_.freeze();
}

MelodyVae::GruDirP MelodyVae::add_gru(const std::string& name, int in, int hidden) {
    GruDirP p;
    p.in = in;
    p.hidden = hidden;
    p.wx = arena_.add(name + ".wx", 3 * hidden, in, ParamGroup::Vae);
    p.wh = arena_.add(name + ".wh", 3 * hidden, hidden, ParamGroup::Vae);
    p.bx = arena_.add(name + ".bx", 3 * hidden, 1, ParamGroup::Vae);
    p.bh = arena_.add(name + ".bh", 3 * hidden, 1, ParamGroup::Vae);
    return p;
}

MelodyVae::LinearP MelodyVae::add_linear(const std::string& name, int out, int in,
                                         ParamGroup g) {
    LinearP p;
    p.out = out;
    p.in = in;
    p.w = arena_.add(name + ".w", out, in, g);
    p.b = arena_.add(name + ".b", out, 1, g);
    return p;
}

MelodyVae::DecoderP MelodyVae::add_decoder(const std::string& name, int zdim, int out_dim,
                                           int ar_width) {
    DecoderP d;
    d.zdim = zdim;
    d.out_dim = out_dim;
    d.ar_width = ar_width;
    d.pos = arena_.add(name + ".pos", cfg_.seq_len, cfg_.pos_dim, ParamGroup::Vae);
    int in = zdim + cfg_.pos_dim + ar_width;
    for (int l = 0; l < cfg_.decoder_layers; ++l) {
        d.h0.push_back(add_linear(name + ".h0." + std::to_string(l), cfg_.hidden, zdim,
                                  ParamGroup::Vae));
        d.layers.push_back(add_gru(name + ".gru" + std::to_string(l), in, cfg_.hidden));
        in = cfg_.hidden;
    }
    d.out = add_linear(name + ".out", out_dim, cfg_.hidden, ParamGroup::Vae);
    return d;
}

void MelodyVae::init_params() {
    Rng rng(cfg_.init_seed);
    for (const auto& info : arena_.infos()) {
        double* p = arena_.values().data() + info.offset;
        if (info.cols == 1) {
            // logvar heads start at sigma ~ 0.14 so the decoders see usable
            // latents before the KL weight ramps up; everything else at 0
            const double bias = info.name.find(".lv.b") != std::string::npos ? -4.0 : 0.0;
            std::fill(p, p + info.count(), bias);
            continue;
        }
        if (info.name.find(".pos") != std::string::npos) {
            // step-index embeddings start as (wrapped) identity rows so the
            // first decoder layer can address the latent per position from
            // the very first update
            std::fill(p, p + info.count(), 0.0);
            for (int t = 0; t < info.rows; ++t) p[size_t(t) * info.cols + t % info.cols] = 1.0;
            continue;
        }
        const double a = 1.0 / std::sqrt(double(info.cols));
        for (size_t i = 0; i < info.count(); ++i) p[i] = (2.0 * rng.uniform() - 1.0) * a;
    }
}

// --- embeddings -------------------------------------------------------------------

void MelodyVae::embed_stream(const Embedding& e, std::span<const int> ids, Mat& dst,
                             int col0) const {
    for (int t = 0; t < dst.rows; ++t) {
        const int id = ids[size_t(t)];
        if (id < 0 || id >= e.vocab)
            throw data_error("embed_melody: token id " + std::to_string(id) +
                             " out of range [0," + std::to_string(e.vocab) + ")");
        double* row = dst.row(t) + col0;
        if (e.table >= 0) {
            const double* src = arena_.p(e.table) + size_t(id) * e.dim;
            std::copy(src, src + e.dim, row);
        } else {
            row[id] = 1.0;
        }
    }
}

Mat MelodyVae::embed_melody(std::span<const int> pitch_ids, std::span<const int> interval_ids,
                            std::span<const int> rhythm_ids) const {
    const int T = cfg_.seq_len;
    if (int(pitch_ids.size()) != T || int(interval_ids.size()) != T ||
        int(rhythm_ids.size()) != T)
        throw data_error("embed_melody: streams must have length " + std::to_string(T));
    Mat out(T, cfg_.input_width());
    int col = 0;
    embed_stream(emb_pitch_, pitch_ids, out, col);
    col += cfg_.stream_embed_width(cfg_.pitch_vocab);
    embed_stream(emb_interval_, interval_ids, out, col);
    col += cfg_.stream_embed_width(cfg_.interval_vocab);
    embed_stream(emb_rhythm_, rhythm_ids, out, col);
    return out;
}

void MelodyVae::scatter_embedding_grads(std::span<const int> ids, const Mat& dinputs,
                                        int col0, const Embedding& e, GradBuffer& g) const {
    if (e.table < 0) return;  // one-hot mode has no embedding parameters
    double* table_g = g.at(arena_, e.table);
    for (int t = 0; t < dinputs.rows; ++t) {
        const double* src = dinputs.row(t) + col0;
        double* dst = table_g + size_t(ids[size_t(t)]) * e.dim;
        for (int j = 0; j < e.dim; ++j) dst[j] += src[j];
    }
}

void MelodyVae::input_grads_to_embeddings(const corpus::TernaryWindow& w, const Mat& dinputs,
                                          GradBuffer& g) const {
    if (cfg_.one_hot_input) return;
    int col = 0;
    scatter_embedding_grads(window_prefix(w.pitch_ids), dinputs, col, emb_pitch_, g);
    col += cfg_.stream_embed_width(cfg_.pitch_vocab);
    scatter_embedding_grads(window_prefix(w.interval_ids), dinputs, col, emb_interval_, g);
    col += cfg_.stream_embed_width(cfg_.interval_vocab);
    scatter_embedding_grads(window_prefix(w.rhythm_ids), dinputs, col, emb_rhythm_, g);
}

// --- GRU core ----------------------------------------------------------------------

namespace {

// gates from precomputed u = Wx x + bx and v = Wh h_prev + bh
inline void gru_gates(const double* u, const double* v, const double* h_prev, int H,
                      double* r, double* z, double* n, double* vn, double* h) {
    for (int i = 0; i < H; ++i) {
        r[i] = sigmoid(u[i] + v[i]);
        z[i] = sigmoid(u[H + i] + v[H + i]);
        vn[i] = v[2 * H + i];
        n[i] = std::tanh(u[2 * H + i] + r[i] * vn[i]);
        h[i] = (1.0 - z[i]) * n[i] + z[i] * h_prev[i];
    }
}

void add_bias_rows(Mat& m, const double* bias) {
    for (int t = 0; t < m.rows; ++t) {
        double* row = m.row(t);
        for (int j = 0; j < m.cols; ++j) row[j] += bias[j];
    }
}

Mat reverse_rows(const Mat& m) {
    Mat out(m.rows, m.cols);
    for (int t = 0; t < m.rows; ++t)
        std::copy(m.row(t), m.row(t) + m.cols, out.row(m.rows - 1 - t));
    return out;
}

void column_sums_into(const Mat& m, double* acc) {
    for (int t = 0; t < m.rows; ++t) {
        const double* row = m.row(t);
        for (int j = 0; j < m.cols; ++j) acc[j] += row[j];
    }
}

} // namespace

void MelodyVae::gru_dir_forward(const GruDirP& p, const Mat& x, GruDirTrace& tr) const {
    const int T = x.rows, H = p.hidden;
    const auto& kb = k::active();

    Mat gx(T, 3 * H);
    kb.gemm_nt(gx.data(), x.data(), arena_.p(p.wx), T, 3 * H, p.in, false);
    add_bias_rows(gx, arena_.p(p.bx));

    tr.r = Mat(T, H); tr.z = Mat(T, H); tr.n = Mat(T, H);
    tr.vn = Mat(T, H); tr.h = Mat(T, H);
    if (tr.h0.empty()) tr.h0.assign(size_t(H), 0.0);

    std::vector<double> v(size_t(3) * H);
    const double* h_prev = tr.h0.data();
    for (int t = 0; t < T; ++t) {
        kb.gemv(v.data(), arena_.p(p.wh), h_prev, 3 * H, H, false);
        const double* bh = arena_.p(p.bh);
        for (int i = 0; i < 3 * H; ++i) v[size_t(i)] += bh[i];
        gru_gates(gx.row(t), v.data(), h_prev, H, tr.r.row(t), tr.z.row(t), tr.n.row(t),
                  tr.vn.row(t), tr.h.row(t));
        h_prev = tr.h.row(t);
    }
}

void MelodyVae::gru_dir_backward(const GruDirP& p, const Mat& x, const GruDirTrace& tr,
                                 const Mat& dH, std::vector<double>* dh0, Mat* dX,
                                 GradBuffer& g) const {
    const int T = x.rows, H = p.hidden;
    const auto& kb = k::active();

    Mat dGx(T, 3 * H), dGh(T, 3 * H);
    std::vector<double> carry(size_t(H), 0.0);

    for (int t = T - 1; t >= 0; --t) {
        const double* r = tr.r.row(t);
        const double* z = tr.z.row(t);
        const double* n = tr.n.row(t);
        const double* vn = tr.vn.row(t);
        const double* h_prev = t > 0 ? tr.h.row(t - 1) : tr.h0.data();
        double* du = dGx.row(t);
        double* dv = dGh.row(t);

        for (int i = 0; i < H; ++i) {
            const double dht = dH.at(t, i) + carry[size_t(i)];
            const double dn = dht * (1.0 - z[i]);
            const double dz = dht * (h_prev[i] - n[i]);
            const double dn_pre = dn * (1.0 - n[i] * n[i]);
            const double dvn = dn_pre * r[i];
            const double dr_pre = dn_pre * vn[i] * r[i] * (1.0 - r[i]);
            const double dz_pre = dz * z[i] * (1.0 - z[i]);
            du[i] = dr_pre;
            du[H + i] = dz_pre;
            du[2 * H + i] = dn_pre;
            dv[i] = dr_pre;
            dv[H + i] = dz_pre;
            dv[2 * H + i] = dvn;
            carry[size_t(i)] = dht * z[i];
        }
        // carry += Wh^T dv
        kb.gemv_t(carry.data(), arena_.p(p.wh), dv, 3 * H, H, true);
    }

    // weight/bias gradients batched over the sequence
    Mat h_prev_rows(T, H);
    std::copy(tr.h0.begin(), tr.h0.end(), h_prev_rows.row(0));
    for (int t = 1; t < T; ++t)
        std::copy(tr.h.row(t - 1), tr.h.row(t - 1) + H, h_prev_rows.row(t));

    kb.gemm_tn(g.at(arena_, p.wx), dGx.data(), x.data(), 3 * H, p.in, T, true);
    kb.gemm_tn(g.at(arena_, p.wh), dGh.data(), h_prev_rows.data(), 3 * H, H, T, true);
    column_sums_into(dGx, g.at(arena_, p.bx));
    column_sums_into(dGh, g.at(arena_, p.bh));
    if (dX) kb.gemm_nn(dX->data(), dGx.data(), arena_.p(p.wx), T, p.in, 3 * H, true);
    if (dh0) {
        for (int i = 0; i < H; ++i) (*dh0)[size_t(i)] += carry[size_t(i)];
    }
}

// --- encoder --------------------------------------------------------------------------

void MelodyVae::encoder_forward(const Mat& inputs, EncoderTrace& tr) const {
    const int T = cfg_.seq_len, H = cfg_.hidden;
    const auto& kb = k::active();
    tr.inputs = inputs;
    tr.blocks.resize(enc_blocks_.size());

    const Mat* x = &tr.inputs;
    for (size_t b = 0; b < enc_blocks_.size(); ++b) {
        const EncBlockP& p = enc_blocks_[b];
        EncBlockTrace& bt = tr.blocks[b];
        bt.x = *x;
        bt.x_rev = reverse_rows(bt.x);
        gru_dir_forward(p.fw, bt.x, bt.fw);
        gru_dir_forward(p.bw, bt.x_rev, bt.bw);

        bt.y = Mat(T, 2 * H);
        for (int t = 0; t < T; ++t) {
            std::copy(bt.fw.h.row(t), bt.fw.h.row(t) + H, bt.y.row(t));
            std::copy(bt.bw.h.row(T - 1 - t), bt.bw.h.row(T - 1 - t) + H, bt.y.row(t) + H);
        }
        if (p.wskip >= 0)
            kb.gemm_nt(bt.y.data(), bt.x.data(), arena_.p(p.wskip), T, 2 * H, p.in, true);
        else
            for (size_t i = 0; i < bt.y.v.size(); ++i) bt.y.v[i] += bt.x.v[i];

        for (int t = 0; t < T; ++t)
            for (int j = 0; j < 2 * H; ++j)
                if (!std::isfinite(bt.y.at(t, j)))
                    throw model_error("encode: non-finite activation at step " +
                                      std::to_string(t));
        x = &bt.y;
    }

    const EncBlockTrace& top = tr.blocks.back();
    tr.summary.assign(size_t(2) * H, 0.0);
    std::copy(top.fw.h.row(T - 1), top.fw.h.row(T - 1) + H, tr.summary.begin());
    std::copy(top.bw.h.row(T - 1), top.bw.h.row(T - 1) + H, tr.summary.begin() + H);
}

void MelodyVae::encoder_backward(const EncoderTrace& tr, const std::vector<double>& dsummary,
                                 Mat& dinputs, GradBuffer& g) const {
    const int T = cfg_.seq_len, H = cfg_.hidden;
    const auto& kb = k::active();

    Mat dY(T, 2 * H);  // grad of current block's output; zero for the top block
    for (int b = int(enc_blocks_.size()) - 1; b >= 0; --b) {
        const EncBlockP& p = enc_blocks_[size_t(b)];
        const EncBlockTrace& bt = tr.blocks[size_t(b)];

        Mat dHfw(T, H), dHbw(T, H);
        for (int t = 0; t < T; ++t) {
            std::copy(dY.row(t), dY.row(t) + H, dHfw.row(t));
            // backward direction stores states in processing order
            std::copy(dY.row(T - 1 - t) + H, dY.row(T - 1 - t) + 2 * H, dHbw.row(t));
        }
        if (b == int(enc_blocks_.size()) - 1) {
            for (int i = 0; i < H; ++i) {
                dHfw.at(T - 1, i) += dsummary[size_t(i)];
                dHbw.at(T - 1, i) += dsummary[size_t(H + i)];
            }
        }

        Mat dX(T, p.in), dXrev(T, p.in);
        gru_dir_backward(p.fw, bt.x, bt.fw, dHfw, nullptr, &dX, g);
        gru_dir_backward(p.bw, bt.x_rev, bt.bw, dHbw, nullptr, &dXrev, g);
        const Mat dXrev_flipped = reverse_rows(dXrev);
        for (size_t i = 0; i < dX.v.size(); ++i) dX.v[i] += dXrev_flipped.v[i];

        if (p.wskip >= 0) {
            kb.gemm_tn(g.at(arena_, p.wskip), dY.data(), bt.x.data(), 2 * H, p.in, T, true);
            kb.gemm_nn(dX.data(), dY.data(), arena_.p(p.wskip), T, p.in, 2 * H, true);
        } else {
            for (size_t i = 0; i < dX.v.size(); ++i) dX.v[i] += dY.v[i];
        }

        if (b == 0)
            dinputs = std::move(dX);
        else
            dY = std::move(dX);
    }
}

// --- encode / reparameterization --------------------------------------------------------

namespace {

void linear_forward(const kernels::Backend& kb, const double* w, const double* b,
                    std::span<const double> x, std::span<double> y, int out, int in) {
    kb.gemv(y.data(), w, x.data(), out, in, false);
    for (int i = 0; i < out; ++i) y[size_t(i)] += b[i];
}

} // namespace

EncodeResult MelodyVae::encode(const Mat& inputs, const LatentNoise& noise) const {
    if (inputs.rows != cfg_.seq_len || inputs.cols != cfg_.input_width())
        throw model_error("encode: input sequence has wrong shape");
    const auto& kb = k::active();

    EncodeResult res;
    encoder_forward(inputs, res.trace);

    const std::vector<double>& s = res.trace.summary;
    Latent* latents[4] = {&res.bundle.ps, &res.bundle.pc, &res.bundle.rs, &res.bundle.rc};
    const std::vector<double>* eps[4] = {&noise.ps, &noise.pc, &noise.rs, &noise.rc};
    for (int i = 0; i < 4; ++i) {
        const LinearP& mu = head_mu_[i];
        const LinearP& lv = head_lv_[i];
        Latent& L = *latents[i];
        if (int(eps[i]->size()) != mu.out)
            throw model_error("encode: noise vector has wrong length");
        L.mu.assign(size_t(mu.out), 0.0);
        L.logvar.assign(size_t(mu.out), 0.0);
        linear_forward(kb, arena_.p(mu.w), arena_.p(mu.b), s, L.mu, mu.out, mu.in);
        linear_forward(kb, arena_.p(lv.w), arena_.p(lv.b), s, L.logvar, lv.out, lv.in);
        L.eps = *eps[i];
        L.z.resize(L.mu.size());
        for (size_t d = 0; d < L.z.size(); ++d)
            L.z[d] = L.mu[d] + std::exp(0.5 * L.logvar[d]) * L.eps[d];
    }
    return res;
}

// Windows are fixed at 32 steps; models with a shorter seq_len consume the
// leading prefix (the tiny gradient-check configuration relies on this).
std::span<const int> MelodyVae::window_prefix(const std::array<int, corpus::kWindowLen>& ids) const {
    if (cfg_.seq_len > corpus::kWindowLen)
        throw model_error("seq_len exceeds the window length");
    return {ids.data(), size_t(cfg_.seq_len)};
}

EncodeResult MelodyVae::encode_window(const corpus::TernaryWindow& w,
                                      const LatentNoise& noise) const {
    return encode(embed_melody(window_prefix(w.pitch_ids), window_prefix(w.interval_ids),
                               window_prefix(w.rhythm_ids)),
                  noise);
}

// --- decoders ------------------------------------------------------------------------

const MelodyVae::DecoderP& MelodyVae::decoder(DecoderKind kind) const {
    switch (kind) {
        case DecoderKind::Pitch: return dec_pitch_;
        case DecoderKind::Rhythm: return dec_rhythm_;
        case DecoderKind::Melody: return dec_melody_;
    }
    throw model_error("unknown decoder kind");
}

Mat MelodyVae::ar_inputs_for(DecoderKind kind, const corpus::TernaryWindow& w) const {
    const DecoderP& p = decoder(kind);
    Mat ar(cfg_.seq_len, p.ar_width);
    if (p.ar_width == 0) return ar;
    auto fill = [&](const Embedding& e, const std::array<int, corpus::kWindowLen>& ids,
                    int col0) {
        for (int t = 1; t < cfg_.seq_len; ++t) {
            const int id = ids[size_t(t - 1)];
            double* row = ar.row(t) + col0;
            if (e.table >= 0) {
                const double* src = arena_.p(e.table) + size_t(id) * e.dim;
                std::copy(src, src + e.dim, row);
            } else {
                row[id] = 1.0;
            }
        }
    };
    if (kind == DecoderKind::Pitch) {
        fill(emb_pitch_, w.pitch_ids, 0);
    } else if (kind == DecoderKind::Rhythm) {
        fill(emb_rhythm_, w.rhythm_ids, 0);
    } else {
        int col = 0;
        fill(emb_pitch_, w.pitch_ids, col);
        col += cfg_.stream_embed_width(cfg_.pitch_vocab);
        fill(emb_interval_, w.interval_ids, col);
        col += cfg_.stream_embed_width(cfg_.interval_vocab);
        fill(emb_rhythm_, w.rhythm_ids, col);
    }
    return ar;
}

void MelodyVae::ar_grads_to_embeddings(DecoderKind kind, const corpus::TernaryWindow& w,
                                       const Mat& d_ar, GradBuffer& g) const {
    if (cfg_.one_hot_input || decoder(kind).ar_width == 0) return;
    auto scatter = [&](const Embedding& e, const std::array<int, corpus::kWindowLen>& ids,
                       int col0) {
        double* table_g = g.at(arena_, e.table);
        for (int t = 1; t < cfg_.seq_len; ++t) {
            const double* src = d_ar.row(t) + col0;
            double* dst = table_g + size_t(ids[size_t(t - 1)]) * e.dim;
            for (int j = 0; j < e.dim; ++j) dst[j] += src[j];
        }
    };
    if (kind == DecoderKind::Pitch) {
        scatter(emb_pitch_, w.pitch_ids, 0);
    } else if (kind == DecoderKind::Rhythm) {
        scatter(emb_rhythm_, w.rhythm_ids, 0);
    } else {
        int col = 0;
        scatter(emb_pitch_, w.pitch_ids, col);
        col += cfg_.stream_embed_width(cfg_.pitch_vocab);
        scatter(emb_interval_, w.interval_ids, col);
        col += cfg_.stream_embed_width(cfg_.interval_vocab);
        scatter(emb_rhythm_, w.rhythm_ids, col);
    }
}

void MelodyVae::decoder_forward(const DecoderP& p, std::span<const double> z,
                                const Mat* ar_inputs, DecoderTrace& tr) const {
    if (int(z.size()) != p.zdim)
        throw model_error("decoder latent has length " + std::to_string(z.size()) +
                          ", expected " + std::to_string(p.zdim));
    const int T = cfg_.seq_len, H = cfg_.hidden;
    const auto& kb = k::active();

    tr.z.assign(z.begin(), z.end());
    const int in0 = p.zdim + cfg_.pos_dim + p.ar_width;
    tr.x = Mat(T, in0);
    const double* pos = arena_.p(p.pos);
    for (int t = 0; t < T; ++t) {
        double* row = tr.x.row(t);
        std::copy(z.begin(), z.end(), row);
        std::copy(pos + size_t(t) * cfg_.pos_dim, pos + size_t(t + 1) * cfg_.pos_dim,
                  row + p.zdim);
        if (p.ar_width > 0) {
            if (!ar_inputs) throw model_error("autoregressive decoder needs teacher inputs");
            std::copy(ar_inputs->row(t), ar_inputs->row(t) + p.ar_width,
                      row + p.zdim + cfg_.pos_dim);
        }
    }

    tr.layers.resize(p.layers.size());
    tr.h0.resize(p.layers.size());
    const Mat* x = &tr.x;
    for (size_t l = 0; l < p.layers.size(); ++l) {
        tr.h0[l].assign(size_t(H), 0.0);
        linear_forward(kb, arena_.p(p.h0[l].w), arena_.p(p.h0[l].b), z, tr.h0[l], H, p.zdim);
        tr.layers[l].h0 = tr.h0[l];
        gru_dir_forward(p.layers[l], *x, tr.layers[l]);
        x = &tr.layers[l].h;
    }

    tr.logits = Mat(T, p.out_dim);
    kb.gemm_nt(tr.logits.data(), x->data(), arena_.p(p.out.w), T, p.out_dim, H, false);
    add_bias_rows(tr.logits, arena_.p(p.out.b));
}

void MelodyVae::decoder_backward(const DecoderP& p, const DecoderTrace& tr,
                                 const Mat& dlogits, std::vector<double>& dz,
                                 Mat* d_ar_inputs, GradBuffer& g) const {
    const int T = cfg_.seq_len, H = cfg_.hidden;
    const auto& kb = k::active();

    const Mat& h_top = tr.layers.back().h;
    kb.gemm_tn(g.at(arena_, p.out.w), dlogits.data(), h_top.data(), p.out_dim, H, T, true);
    column_sums_into(dlogits, g.at(arena_, p.out.b));

    Mat dH(T, H);
    kb.gemm_nn(dH.data(), dlogits.data(), arena_.p(p.out.w), T, H, p.out_dim, false);

    for (int l = int(p.layers.size()) - 1; l >= 0; --l) {
        const Mat& x = l == 0 ? tr.x : tr.layers[size_t(l) - 1].h;
        Mat dX(T, p.layers[size_t(l)].in);
        std::vector<double> dh0(size_t(H), 0.0);
        gru_dir_backward(p.layers[size_t(l)], x, tr.layers[size_t(l)], dH, &dh0, &dX, g);

        // initial-state map: h0 = W0 z + b0
        double* w0g = g.at(arena_, p.h0[size_t(l)].w);
        for (int i = 0; i < H; ++i)
            kb.axpy(w0g + size_t(i) * p.zdim, dh0[size_t(i)], tr.z.data(), p.zdim);
        double* b0g = g.at(arena_, p.h0[size_t(l)].b);
        for (int i = 0; i < H; ++i) b0g[i] += dh0[size_t(i)];
        kb.gemv_t(dz.data(), arena_.p(p.h0[size_t(l)].w), dh0.data(), H, p.zdim, true);

        if (l == 0) {
            // split layer-0 input grads: latent, positional table, teacher slice
            for (int t = 0; t < T; ++t) {
                const double* row = dX.row(t);
                for (int j = 0; j < p.zdim; ++j) dz[size_t(j)] += row[j];
            }
            double* pos_g = g.at(arena_, p.pos);
            for (int t = 0; t < T; ++t) {
                const double* row = dX.row(t) + p.zdim;
                double* dst = pos_g + size_t(t) * cfg_.pos_dim;
                for (int j = 0; j < cfg_.pos_dim; ++j) dst[j] += row[j];
            }
            if (p.ar_width > 0 && d_ar_inputs) {
                *d_ar_inputs = Mat(T, p.ar_width);
                for (int t = 0; t < T; ++t)
                    std::copy(dX.row(t) + p.zdim + cfg_.pos_dim, dX.row(t) + dX.cols,
                              d_ar_inputs->row(t));
            }
        } else {
            dH = std::move(dX);
        }
    }
}

DecoderTrace MelodyVae::run_decoder(DecoderKind kind, std::span<const double> z,
                                    const corpus::TernaryWindow* teacher) const {
    const DecoderP& p = decoder(kind);
    DecoderTrace tr;
    if (p.ar_width > 0) {
        if (!teacher)
            throw model_error("autoregressive decoding needs a teacher window");
        const Mat ar = ar_inputs_for(kind, *teacher);
        decoder_forward(p, z, &ar, tr);
    } else {
        decoder_forward(p, z, nullptr, tr);
    }
    return tr;
}

Mat MelodyVae::decode_pitch(std::span<const double> z_p) const {
    return run_decoder(DecoderKind::Pitch, z_p, nullptr).logits;
}

Mat MelodyVae::decode_rhythm(std::span<const double> z_r) const {
    return run_decoder(DecoderKind::Rhythm, z_r, nullptr).logits;
}

Mat MelodyVae::decode_melody(const LatentBundle& bundle) const {
    const std::vector<double> z = melody_latent(bundle);
    Mat logits = run_decoder(DecoderKind::Melody, z, nullptr).logits;
    for (double& x : logits.v) x = sigmoid(x);
    return logits;
}

// --- single-step decoding for sampling -------------------------------------------------

MelodyVae::StepState MelodyVae::start_step_state(DecoderKind kind,
                                                 std::span<const double> z) const {
    const DecoderP& p = decoder(kind);
    if (int(z.size()) != p.zdim) throw model_error("start_step_state: wrong latent length");
    const auto& kb = k::active();
    StepState st;
    st.h.resize(p.layers.size());
    for (size_t l = 0; l < p.layers.size(); ++l) {
        st.h[l].assign(size_t(cfg_.hidden), 0.0);
        linear_forward(kb, arena_.p(p.h0[l].w), arena_.p(p.h0[l].b), z, st.h[l],
                       cfg_.hidden, p.zdim);
    }
    return st;
}

std::vector<double> MelodyVae::decode_step(DecoderKind kind, std::span<const double> z,
                                           StepState& state,
                                           std::span<const int> prev_ids) const {
    const DecoderP& p = decoder(kind);
    const int H = cfg_.hidden;
    if (state.t >= cfg_.seq_len) throw model_error("decode_step past sequence end");
    const auto& kb = k::active();

    std::vector<double> x(size_t(p.zdim) + cfg_.pos_dim + p.ar_width, 0.0);
    std::copy(z.begin(), z.end(), x.begin());
    const double* pos = arena_.p(p.pos) + size_t(state.t) * cfg_.pos_dim;
    std::copy(pos, pos + cfg_.pos_dim, x.begin() + p.zdim);
    if (p.ar_width > 0 && state.t > 0) {
        // prev_ids carries the decoder's own stream(s): pitch | rhythm |
        // (pitch, interval, rhythm) for the melody decoder
        const Embedding* embs[3] = {&emb_pitch_, &emb_interval_, &emb_rhythm_};
        std::vector<const Embedding*> wanted;
        if (kind == DecoderKind::Pitch) wanted = {embs[0]};
        else if (kind == DecoderKind::Rhythm) wanted = {embs[2]};
        else wanted = {embs[0], embs[1], embs[2]};
        if (prev_ids.size() != wanted.size())
            throw model_error("decode_step: wrong number of previous token ids");
        int col = p.zdim + cfg_.pos_dim;
        for (size_t s = 0; s < wanted.size(); ++s) {
            const Embedding& e = *wanted[s];
            const int id = prev_ids[s];
            if (id < 0 || id >= e.vocab) throw data_error("decode_step: token id out of range");
            if (e.table >= 0) {
                const double* src = arena_.p(e.table) + size_t(id) * e.dim;
                std::copy(src, src + e.dim, x.begin() + col);
            } else {
                x[size_t(col + id)] = 1.0;
            }
            col += e.dim;
        }
    }

    std::vector<double> u(size_t(3) * H), v(size_t(3) * H);
    std::vector<double> r(size_t(H), 0.0), zg(size_t(H), 0.0), n(size_t(H), 0.0),
        vn(size_t(H), 0.0), h_new(size_t(H), 0.0);
    const std::vector<double>* layer_in = &x;
    for (size_t l = 0; l < p.layers.size(); ++l) {
        const GruDirP& gp = p.layers[l];
        kb.gemv(u.data(), arena_.p(gp.wx), layer_in->data(), 3 * H, gp.in, false);
        const double* bx = arena_.p(gp.bx);
        for (int i = 0; i < 3 * H; ++i) u[size_t(i)] += bx[i];
        kb.gemv(v.data(), arena_.p(gp.wh), state.h[l].data(), 3 * H, H, false);
        const double* bh = arena_.p(gp.bh);
        for (int i = 0; i < 3 * H; ++i) v[size_t(i)] += bh[i];
        gru_gates(u.data(), v.data(), state.h[l].data(), H, r.data(), zg.data(), n.data(),
                  vn.data(), h_new.data());
        state.h[l] = h_new;
        layer_in = &state.h[l];
    }

    std::vector<double> logits(size_t(p.out_dim), 0.0);
    linear_forward(kb, arena_.p(p.out.w), arena_.p(p.out.b), *layer_in, logits, p.out_dim, H);
    state.t++;
    return logits;
}

// --- classifiers ------------------------------------------------------------------------

std::vector<double> MelodyVae::classify_style(std::span<const double> z_s) const {
    if (int(z_s.size()) != cls_style_.in)
        throw model_error("classify_style: latent has length " + std::to_string(z_s.size()) +
                          ", expected " + std::to_string(cls_style_.in));
    std::vector<double> logits(size_t(cls_style_.out), 0.0);
    linear_forward(k::active(), arena_.p(cls_style_.w), arena_.p(cls_style_.b), z_s, logits,
                   cls_style_.out, cls_style_.in);
    losses::softmax(logits, logits);
    return logits;
}

std::vector<double> MelodyVae::classify_adversary(std::span<const double> z_c) const {
    if (int(z_c.size()) != cls_adversary_.in)
        throw model_error("classify_adversary: latent has length " +
                          std::to_string(z_c.size()) + ", expected " +
                          std::to_string(cls_adversary_.in));
    std::vector<double> logits(size_t(cls_adversary_.out), 0.0);
    linear_forward(k::active(), arena_.p(cls_adversary_.w), arena_.p(cls_adversary_.b), z_c,
                   logits, cls_adversary_.out, cls_adversary_.in);
    losses::softmax(logits, logits);
    return logits;
}

// --- multi-hot target ---------------------------------------------------------------------

Mat MelodyVae::melody_multi_hot(const corpus::TernaryWindow& w) const {
    Mat target(cfg_.seq_len, cfg_.melody_width());
    for (int t = 0; t < cfg_.seq_len; ++t) {
        const int p = w.pitch_ids[size_t(t)];
        const int i = w.interval_ids[size_t(t)];
        const int r = w.rhythm_ids[size_t(t)];
        if (p < 0 || p >= cfg_.pitch_vocab || i < 0 || i >= cfg_.interval_vocab || r < 0 ||
            r >= cfg_.rhythm_vocab)
            throw data_error("melody target: token id out of range at step " +
                             std::to_string(t));
        target.at(t, p) = 1.0;
        target.at(t, cfg_.pitch_vocab + i) = 1.0;
        target.at(t, cfg_.pitch_vocab + cfg_.interval_vocab + r) = 1.0;
    }
    return target;
}

// --- full objective pass over one window ---------------------------------------------------

WindowLosses MelodyVae::forward_window(const corpus::TernaryWindow& w,
                                       const LatentNoise& noise,
                                       const losses::AblationFlags& flags,
                                       WindowTrace& trace) const {
    const corpus::TernaryWindow* teacher = cfg_.autoregressive ? &w : nullptr;
    WindowLosses out;

    trace.enc = encode(embed_melody(window_prefix(w.pitch_ids), window_prefix(w.interval_ids),
                                    window_prefix(w.rhythm_ids)),
                       noise);
    const LatentBundle& b = trace.enc.bundle;

    const std::vector<double> z_p = pitch_latent(b);
    const std::vector<double> z_r = rhythm_latent(b);
    const std::vector<double> z_m = melody_latent(b);

    trace.dec_pitch = run_decoder(DecoderKind::Pitch, z_p, teacher);
    trace.dec_rhythm = run_decoder(DecoderKind::Rhythm, z_r, teacher);
    trace.dec_melody = run_decoder(DecoderKind::Melody, z_m, teacher);
    trace.dec_melody.activations = trace.dec_melody.logits;
    for (double& x : trace.dec_melody.activations.v) x = sigmoid(x);

    const losses::Reduction red =
        cfg_.sum_reduction ? losses::Reduction::Sum : losses::Reduction::Mean;
    trace.melody_target = melody_multi_hot(w);
    out.recon_pitch =
        losses::sequence_ce(trace.dec_pitch.logits, window_prefix(w.pitch_ids), red);
    out.recon_rhythm =
        losses::sequence_ce(trace.dec_rhythm.logits, window_prefix(w.rhythm_ids), red);
    out.recon_melody =
        losses::melody_bce(trace.dec_melody.activations, trace.melody_target, red);

    out.kl_total = losses::kl_gaussian(b.ps.mu, b.ps.logvar) +
                   losses::kl_gaussian(b.pc.mu, b.pc.logvar) +
                   losses::kl_gaussian(b.rs.mu, b.rs.logvar) +
                   losses::kl_gaussian(b.rc.mu, b.rc.logvar);

    if (flags.adv_pr) {
        trace.adv_pitch = run_decoder(DecoderKind::Pitch, z_r, teacher);
        trace.adv_pitch.activations = trace.adv_pitch.logits;
        for (double& x : trace.adv_pitch.activations.v) x = sigmoid(x);
        out.adv_pitch = losses::cross_decoder_adversary(trace.adv_pitch.activations, red);

        trace.adv_rhythm = run_decoder(DecoderKind::Rhythm, z_p, teacher);
        trace.adv_rhythm.activations = trace.adv_rhythm.logits;
        for (double& x : trace.adv_rhythm.activations.v) x = sigmoid(x);
        out.adv_rhythm = losses::cross_decoder_adversary(trace.adv_rhythm.activations, red);
    }

    // both classifiers read posterior MEANS: the disentanglement they are
    // meant to enforce (and that the probes later measure) lives in the
    // means, and sampling noise would only mask it from the adversary
    if (flags.dis_zs) {
        trace.style.z = concat2(b.ps.mu, b.rs.mu);
        trace.style.probs = classify_style(trace.style.z);
        out.style_ce = losses::style_ce(trace.style.probs, w.region);
    }
    if (flags.adv_zc) {
        trace.adversary.z = concat2(b.pc.mu, b.rc.mu);
        trace.adversary.probs = classify_adversary(trace.adversary.z);
        out.adversary_entropy = losses::adversary_entropy(trace.adversary.probs);
    }
    return out;
}

namespace {

// d(sequence_ce)/d(logits): (softmax - onehot) / T (mean) or unscaled (sum)
Mat sequence_ce_grad(const Mat& logits, std::span<const int> targets, double scale,
                     bool sum_reduction) {
    Mat d(logits.rows, logits.cols);
    std::vector<double> probs(size_t(logits.cols));
    const double f = sum_reduction ? scale : scale / logits.rows;
    for (int t = 0; t < logits.rows; ++t) {
        losses::softmax(std::span(logits.row(t), size_t(logits.cols)), probs);
        double* row = d.row(t);
        for (int j = 0; j < logits.cols; ++j) row[j] = f * probs[size_t(j)];
        row[targets[size_t(t)]] -= f;
    }
    return d;
}

// d(bce)/d(logits) with the clamp's dead zone honored
Mat bce_grad(const Mat& activations, const Mat* targets, double scale, bool sum_reduction) {
    Mat d(activations.rows, activations.cols);
    const double f = sum_reduction ? scale : scale / double(activations.v.size());
    for (size_t i = 0; i < activations.v.size(); ++i) {
        const double a = activations.v[i];
        if (a <= losses::kProbEps || a >= 1.0 - losses::kProbEps) {
            d.v[i] = 0.0;
            continue;
        }
        const double t = targets ? targets->v[i] : 0.0;
        d.v[i] = f * (a - t);
    }
    return d;
}

} // namespace

void MelodyVae::backward_window(const corpus::TernaryWindow& w,
                                const losses::AblationFlags& flags, double beta,
                                const WindowTrace& trace, double scale,
                                GradBuffer& grads) const {
    const auto& kb = k::active();
    const LatentBundle& b = trace.enc.bundle;
    const int S = cfg_.style_dim, C = cfg_.content_dim;

    std::vector<double> dz_ps(size_t(S), 0.0), dz_pc(size_t(C), 0.0);
    std::vector<double> dz_rs(size_t(S), 0.0), dz_rc(size_t(C), 0.0);
    std::vector<double> dmu_ps(size_t(S), 0.0), dmu_pc(size_t(C), 0.0);
    std::vector<double> dmu_rs(size_t(S), 0.0), dmu_rc(size_t(C), 0.0);

    auto split_pr = [&](const std::vector<double>& dz, std::vector<double>& ds,
                        std::vector<double>& dc) {
        for (int i = 0; i < S; ++i) ds[size_t(i)] += dz[size_t(i)];
        for (int i = 0; i < C; ++i) dc[size_t(i)] += dz[size_t(S + i)];
    };

    // true-latent reconstruction passes
    {
        Mat dlog = sequence_ce_grad(trace.dec_pitch.logits, window_prefix(w.pitch_ids), scale,
                                    cfg_.sum_reduction);
        std::vector<double> dz(size_t(S + C), 0.0);
        Mat d_ar;
        decoder_backward(dec_pitch_, trace.dec_pitch, dlog, dz,
                         cfg_.autoregressive ? &d_ar : nullptr, grads);
        if (cfg_.autoregressive) ar_grads_to_embeddings(DecoderKind::Pitch, w, d_ar, grads);
        split_pr(dz, dz_ps, dz_pc);
    }
    {
        Mat dlog = sequence_ce_grad(trace.dec_rhythm.logits, window_prefix(w.rhythm_ids), scale,
                                     cfg_.sum_reduction);
        std::vector<double> dz(size_t(S + C), 0.0);
        Mat d_ar;
        decoder_backward(dec_rhythm_, trace.dec_rhythm, dlog, dz,
                         cfg_.autoregressive ? &d_ar : nullptr, grads);
        if (cfg_.autoregressive) ar_grads_to_embeddings(DecoderKind::Rhythm, w, d_ar, grads);
        split_pr(dz, dz_rs, dz_rc);
    }
    {
        Mat dlog = bce_grad(trace.dec_melody.activations, &trace.melody_target, scale,
                            cfg_.sum_reduction);
        std::vector<double> dz(size_t(2 * (S + C)), 0.0);
        Mat d_ar;
        decoder_backward(dec_melody_, trace.dec_melody, dlog, dz,
                         cfg_.autoregressive ? &d_ar : nullptr, grads);
        if (cfg_.autoregressive) ar_grads_to_embeddings(DecoderKind::Melody, w, d_ar, grads);
        for (int i = 0; i < S; ++i) dz_ps[size_t(i)] += dz[size_t(i)];
        for (int i = 0; i < C; ++i) dz_pc[size_t(i)] += dz[size_t(S + i)];
        for (int i = 0; i < S; ++i) dz_rs[size_t(i)] += dz[size_t(S + C + i)];
        for (int i = 0; i < C; ++i) dz_rc[size_t(i)] += dz[size_t(2 * S + C + i)];
    }

    // wrong-latent suppression passes: pitch decoder ate z_r, rhythm decoder ate z_p
    if (flags.adv_pr) {
        {
            Mat dlog = bce_grad(trace.adv_pitch.activations, nullptr, scale,
                                cfg_.sum_reduction);
            std::vector<double> dz(size_t(S + C), 0.0);
            Mat d_ar;
            decoder_backward(dec_pitch_, trace.adv_pitch, dlog, dz,
                             cfg_.autoregressive ? &d_ar : nullptr, grads);
            if (cfg_.autoregressive) ar_grads_to_embeddings(DecoderKind::Pitch, w, d_ar, grads);
            split_pr(dz, dz_rs, dz_rc);
        }
        {
            Mat dlog = bce_grad(trace.adv_rhythm.activations, nullptr, scale,
                                 cfg_.sum_reduction);
            std::vector<double> dz(size_t(S + C), 0.0);
            Mat d_ar;
            decoder_backward(dec_rhythm_, trace.adv_rhythm, dlog, dz,
                             cfg_.autoregressive ? &d_ar : nullptr, grads);
            if (cfg_.autoregressive) ar_grads_to_embeddings(DecoderKind::Rhythm, w, d_ar, grads);
            split_pr(dz, dz_ps, dz_pc);
        }
    }

    // style classifier: cross-entropy against the true region
    if (flags.dis_zs) {
        const auto& p = trace.style.probs;
        std::vector<double> dlogit(p.size());
        for (size_t j = 0; j < p.size(); ++j) dlogit[j] = scale * p[j];
        dlogit[size_t(w.region)] -= scale;
        double* wg = grads.at(arena_, cls_style_.w);
        for (int i = 0; i < cls_style_.out; ++i)
            kb.axpy(wg + size_t(i) * cls_style_.in, dlogit[size_t(i)], trace.style.z.data(),
                    cls_style_.in);
        double* bg = grads.at(arena_, cls_style_.b);
        for (int i = 0; i < cls_style_.out; ++i) bg[i] += dlogit[size_t(i)];
        std::vector<double> dzs(size_t(2 * S), 0.0);
        kb.gemv_t(dzs.data(), arena_.p(cls_style_.w), dlogit.data(), cls_style_.out,
                  cls_style_.in, true);
        for (int i = 0; i < S; ++i) dmu_ps[size_t(i)] += dzs[size_t(i)];
        for (int i = 0; i < S; ++i) dmu_rs[size_t(i)] += dzs[size_t(S + i)];
    }

    // adversary entropy enters the total with a minus sign:
    // d(-H)/dlogit_j = p_j (log p_j + H)
    if (flags.adv_zc) {
        const auto& p = trace.adversary.probs;
        const double H = losses::adversary_entropy(p);
        std::vector<double> dlogit(p.size(), 0.0);
        for (size_t j = 0; j < p.size(); ++j)
            if (p[j] > 0.0) dlogit[j] = scale * p[j] * (std::log(p[j]) + H);
        double* wg = grads.at(arena_, cls_adversary_.w);
        for (int i = 0; i < cls_adversary_.out; ++i)
            kb.axpy(wg + size_t(i) * cls_adversary_.in, dlogit[size_t(i)],
                    trace.adversary.z.data(), cls_adversary_.in);
        double* bg = grads.at(arena_, cls_adversary_.b);
        for (int i = 0; i < cls_adversary_.out; ++i) bg[i] += dlogit[size_t(i)];
        std::vector<double> dzc(size_t(2 * C), 0.0);
        kb.gemv_t(dzc.data(), arena_.p(cls_adversary_.w), dlogit.data(), cls_adversary_.out,
                  cls_adversary_.in, true);
        for (int i = 0; i < C; ++i) dmu_pc[size_t(i)] += dzc[size_t(i)];
        for (int i = 0; i < C; ++i) dmu_rc[size_t(i)] += dzc[size_t(C + i)];
    }

    // reparameterization + KL into head gradients, then encoder stack
    std::vector<double> dsummary(size_t(2) * cfg_.hidden, 0.0);
    const Latent* latents[4] = {&b.ps, &b.pc, &b.rs, &b.rc};
    const std::vector<double>* dzs[4] = {&dz_ps, &dz_pc, &dz_rs, &dz_rc};
    const std::vector<double>* dmus[4] = {&dmu_ps, &dmu_pc, &dmu_rs, &dmu_rc};
    for (int i = 0; i < 4; ++i) {
        const Latent& L = *latents[i];
        const std::vector<double>& dz = *dzs[i];
        const std::vector<double>& dmu_direct = *dmus[i];
        const int dim = int(L.mu.size());
        std::vector<double> dmu(size_t(dim), 0.0), dlv(size_t(dim), 0.0);
        for (int d = 0; d < dim; ++d) {
            const double lv = L.logvar[size_t(d)];
            dmu[size_t(d)] = dz[size_t(d)] + dmu_direct[size_t(d)] +
                             scale * beta * L.mu[size_t(d)];
            double dl = dz[size_t(d)] * L.eps[size_t(d)] * 0.5 * std::exp(0.5 * lv);
            if (lv > losses::kLogvarMin && lv < losses::kLogvarMax)
                dl += scale * beta * 0.5 * (std::exp(lv) - 1.0);
            dlv[size_t(d)] = dl;
        }
        const double* s = trace.enc.trace.summary.data();
        auto linear_back = [&](const LinearP& lin, const std::vector<double>& dout) {
            double* wg = grads.at(arena_, lin.w);
            for (int r = 0; r < lin.out; ++r)
                kb.axpy(wg + size_t(r) * lin.in, dout[size_t(r)], s, lin.in);
            double* bg = grads.at(arena_, lin.b);
            for (int r = 0; r < lin.out; ++r) bg[r] += dout[size_t(r)];
            kb.gemv_t(dsummary.data(), arena_.p(lin.w), dout.data(), lin.out, lin.in, true);
        };
        linear_back(head_mu_[i], dmu);
        linear_back(head_lv_[i], dlv);
    }

    Mat dinputs;
    encoder_backward(trace.enc.trace, dsummary, dinputs, grads);
    input_grads_to_embeddings(w, dinputs, grads);
}

// --- classifier-only recognizer path --------------------------------------------------------

std::vector<double> MelodyVae::recognize_probs(const corpus::TernaryWindow& w,
                                               WindowTrace* trace) const {
    WindowTrace local;
    WindowTrace& tr = trace ? *trace : local;
    tr.enc = encode(embed_melody(window_prefix(w.pitch_ids), window_prefix(w.interval_ids),
                                 window_prefix(w.rhythm_ids)),
                    LatentNoise::zero(cfg_));
    tr.style.z = concat2(tr.enc.bundle.ps.mu, tr.enc.bundle.rs.mu);
    tr.style.probs = classify_style(tr.style.z);
    return tr.style.probs;
}

void MelodyVae::recognize_backward(const corpus::TernaryWindow& w, const WindowTrace& trace,
                                   double scale, GradBuffer& grads) const {
    const auto& kb = k::active();
    const int S = cfg_.style_dim;
    const auto& p = trace.style.probs;

    std::vector<double> dlogit(p.size());
    for (size_t j = 0; j < p.size(); ++j) dlogit[j] = scale * p[j];
    dlogit[size_t(w.region)] -= scale;

    double* wg = grads.at(arena_, cls_style_.w);
    for (int i = 0; i < cls_style_.out; ++i)
        kb.axpy(wg + size_t(i) * cls_style_.in, dlogit[size_t(i)], trace.style.z.data(),
                cls_style_.in);
    double* bg = grads.at(arena_, cls_style_.b);
    for (int i = 0; i < cls_style_.out; ++i) bg[i] += dlogit[size_t(i)];

    std::vector<double> dzs(size_t(2 * S), 0.0);
    kb.gemv_t(dzs.data(), arena_.p(cls_style_.w), dlogit.data(), cls_style_.out,
              cls_style_.in, true);

    std::vector<double> dsummary(size_t(2) * cfg_.hidden, 0.0);
    const double* s = trace.enc.trace.summary.data();
    auto mu_back = [&](const LinearP& lin, const double* dmu) {
        double* wgh = grads.at(arena_, lin.w);
        for (int r = 0; r < lin.out; ++r)
            kb.axpy(wgh + size_t(r) * lin.in, dmu[r], s, lin.in);
        double* bgh = grads.at(arena_, lin.b);
        for (int r = 0; r < lin.out; ++r) bgh[r] += dmu[r];
        std::vector<double> d(dmu, dmu + lin.out);
        kb.gemv_t(dsummary.data(), arena_.p(lin.w), d.data(), lin.out, lin.in, true);
    };
    mu_back(head_mu_[0], dzs.data());      // ps
    mu_back(head_mu_[2], dzs.data() + S);  // rs

    Mat dinputs;
    encoder_backward(trace.enc.trace, dsummary, dinputs, grads);
    input_grads_to_embeddings(w, dinputs, grads);
}

// --- checkpoint --------------------------------------------------------------------------

namespace {

json config_to_json(const ModelConfig& c) {
    json j;
    j["seq_len"] = c.seq_len;
    j["hidden"] = c.hidden;
    j["style_dim"] = c.style_dim;
    j["content_dim"] = c.content_dim;
    j["encoder_layers"] = c.encoder_layers;
    j["decoder_layers"] = c.decoder_layers;
    j["embed_dim"] = c.embed_dim;
    j["pos_dim"] = c.pos_dim;
    j["one_hot_input"] = c.one_hot_input;
    j["autoregressive"] = c.autoregressive;
    j["sum_reduction"] = c.sum_reduction;
    j["pitch_vocab"] = c.pitch_vocab;
    j["interval_vocab"] = c.interval_vocab;
    j["rhythm_vocab"] = c.rhythm_vocab;
    j["n_regions"] = c.n_regions;
    j["init_seed"] = c.init_seed;
    return j;
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.seq_len = j.at("seq_len").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.style_dim = j.at("style_dim").get<int>();
    c.content_dim = j.at("content_dim").get<int>();
    c.encoder_layers = j.at("encoder_layers").get<int>();
    c.decoder_layers = j.at("decoder_layers").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.pos_dim = j.at("pos_dim").get<int>();
    c.one_hot_input = j.at("one_hot_input").get<bool>();
    c.autoregressive = j.at("autoregressive").get<bool>();
    c.sum_reduction = j.value("sum_reduction", false);
    c.pitch_vocab = j.at("pitch_vocab").get<int>();
    c.interval_vocab = j.at("interval_vocab").get<int>();
    c.rhythm_vocab = j.at("rhythm_vocab").get<int>();
    c.n_regions = j.at("n_regions").get<int>();
    c.init_seed = j.at("init_seed").get<uint64_t>();
    return c;
}

constexpr char kMagic[8] = {'F', 'O', 'L', 'K', 'V', 'A', 'E', '1'};

void put_u64_le(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

void put_doubles_le(std::vector<uint8_t>& out, const std::vector<double>& v) {
    out.reserve(out.size() + v.size() * 8);
    for (double d : v) put_u64_le(out, std::bit_cast<uint64_t>(d));
}

uint64_t get_u64_le(const std::vector<uint8_t>& buf, size_t& pos) {
    if (pos + 8 > buf.size()) throw parse_error("checkpoint truncated");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(buf[pos + size_t(i)]) << (8 * i);
    pos += 8;
    return v;
}

std::vector<double> get_doubles_le(const std::vector<uint8_t>& buf, size_t& pos, size_t n) {
    std::vector<double> v(n);
    for (size_t i = 0; i < n; ++i) v[i] = std::bit_cast<double>(get_u64_le(buf, pos));
    return v;
}

} // namespace

void save_checkpoint(const std::string& path, const MelodyVae& model,
                     const corpus::Vocabulary& vocab, uint64_t step,
                     const TrainerPersist* trainer) {
    json header;
    header["config"] = config_to_json(model.config());
    header["vocab"] = io::vocab_to_json(vocab);
    header["step"] = step;
    header["params"] = json::array();
    for (const auto& info : model.arena().infos()) {
        json p;
        p["name"] = info.name;
        p["rows"] = info.rows;
        p["cols"] = info.cols;
        header["params"].push_back(p);
    }
    if (trainer) {
        json t;
        t["adam_t"] = trainer->adam_t;
        t["rng_state"] = trainer->rng_state;
        t["global_step"] = trainer->global_step;
        t["epoch"] = trainer->epoch;
        t["best_val_accuracy"] = trainer->best_val_accuracy;
        t["ablation"] = trainer->ablation;
        header["trainer"] = t;
    }

    const std::string header_str = header.dump();
    std::vector<uint8_t> out;
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    put_u64_le(out, header_str.size());
    out.insert(out.end(), header_str.begin(), header_str.end());
    put_doubles_le(out, model.arena().values());
    if (trainer) {
        put_doubles_le(out, trainer->adam_m);
        put_doubles_le(out, trainer->adam_v);
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot write checkpoint: " + path);
    f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
    if (!f) throw io_error("short write to " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open checkpoint: " + path);
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
    if (buf.size() < 16 || std::memcmp(buf.data(), kMagic, 8) != 0)
        throw parse_error(path + ": not a checkpoint file");
    size_t pos = 8;
    const uint64_t header_len = get_u64_le(buf, pos);
    if (pos + header_len > buf.size()) throw parse_error(path + ": truncated header");
    json header;
    try {
        header = json::parse(buf.begin() + long(pos), buf.begin() + long(pos + header_len));
    } catch (const json::exception& e) {
        throw parse_error(path + ": bad header: " + e.what());
    }
    pos += header_len;

    ModelConfig cfg;
    corpus::Vocabulary vocab;
    try {
        cfg = config_from_json(header.at("config"));
        vocab = io::vocab_from_json(header.at("vocab"), path);
    } catch (const json::exception& e) {
        throw parse_error(path + ": bad header: " + e.what());
    }

    MelodyVae model(cfg);
    const auto& infos = model.arena().infos();
    const auto& jparams = header.at("params");
    if (jparams.size() != infos.size())
        throw parse_error(path + ": parameter directory does not match this configuration");
    for (size_t i = 0; i < infos.size(); ++i) {
        if (jparams[i].at("name") != infos[i].name ||
            jparams[i].at("rows").get<int>() != infos[i].rows ||
            jparams[i].at("cols").get<int>() != infos[i].cols)
            throw parse_error(path + ": parameter '" + infos[i].name +
                              "' does not match this configuration");
    }
    model.arena().values() = get_doubles_le(buf, pos, model.arena().size());

    LoadedCheckpoint out{std::move(model), std::move(vocab),
                         header.at("step").get<uint64_t>(), std::nullopt};
    if (header.contains("trainer")) {
        TrainerPersist t;
        const auto& jt = header.at("trainer");
        t.adam_t = jt.at("adam_t").get<uint64_t>();
        const auto rs = jt.at("rng_state").get<std::vector<uint64_t>>();
        if (rs.size() != 4) throw parse_error(path + ": bad rng state");
        std::copy(rs.begin(), rs.end(), t.rng_state.begin());
        t.global_step = jt.at("global_step").get<uint64_t>();
        t.epoch = jt.at("epoch").get<int>();
        t.best_val_accuracy = jt.at("best_val_accuracy").get<double>();
        t.ablation = jt.at("ablation").get<std::string>();
        t.adam_m = get_doubles_le(buf, pos, out.model.arena().size());
        t.adam_v = get_doubles_le(buf, pos, out.model.arena().size());
        out.trainer = std::move(t);
    }
    return out;
}

} // namespace folkvae::model

