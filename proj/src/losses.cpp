#include "folkvae/losses.hpp"
#include "folkvae/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>

namespace folkvae::losses {

AblationFlags flags_from_name(const std::string& name) {
    if (name == "total") return {true, true, true};
    if (name == "vae") return {false, false, false};
    if (name == "vae+advpr") return {true, false, false};
    if (name == "vae+advpr+advzc") return {true, false, true};
    if (name == "vae+advpr+diszs") return {true, true, false};
    throw config_error("unknown ablation '" + name +
                       "' (expected total|vae|vae+advpr|vae+advpr+advzc|vae+advpr+diszs)");
}

std::string flags_to_name(const AblationFlags& f) {
    if (f.adv_pr && f.dis_zs && f.adv_zc) return "total";
    if (!f.adv_pr && !f.dis_zs && !f.adv_zc) return "vae";
    if (f.adv_pr && !f.dis_zs && !f.adv_zc) return "vae+advpr";
    if (f.adv_pr && !f.dis_zs && f.adv_zc) return "vae+advpr+advzc";
    if (f.adv_pr && f.dis_zs && !f.adv_zc) return "vae+advpr+diszs";
    return "custom";
}

bool LossReport::all_finite() const { return first_non_finite().empty(); }

std::string LossReport::first_non_finite() const {
    const std::pair<const char*, double> parts[] = {
        {"recon_pitch", recon_pitch},   {"recon_rhythm", recon_rhythm},
        {"recon_melody", recon_melody}, {"kl_total", kl_total},
        {"adv_pitch", adv_pitch},       {"adv_rhythm", adv_rhythm},
        {"style_ce", style_ce},         {"adversary_entropy", adversary_entropy},
        {"beta", beta},                 {"total", total},
    };
    for (const auto& [name, value] : parts)
        if (!std::isfinite(value)) return name;
    return "";
}

std::string LossReport::to_json_line() const {
    nlohmann::json j;
    j["recon_pitch"] = recon_pitch;
    j["recon_rhythm"] = recon_rhythm;
    j["recon_melody"] = recon_melody;
    j["kl_total"] = kl_total;
    j["adv_pitch"] = adv_pitch;
    j["adv_rhythm"] = adv_rhythm;
    j["style_ce"] = style_ce;
    j["adversary_entropy"] = adversary_entropy;
    j["beta"] = beta;
    j["total"] = total;
    return j.dump();
}

double clamp_logvar(double lv) { return std::clamp(lv, kLogvarMin, kLogvarMax); }
double clamp_prob(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }

double kl_gaussian(std::span<const double> mean, std::span<const double> logvar) {
    if (mean.size() != logvar.size())
        throw model_error("kl_gaussian: mean/logvar length mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < mean.size(); ++i) {
        const double lv = clamp_logvar(logvar[i]);
        acc += mean[i] * mean[i] + std::exp(lv) - lv - 1.0;
    }
    return 0.5 * acc;
}

double sequence_ce(const Mat& logits, std::span<const int> target_ids,
                   Reduction reduction) {
    if (size_t(logits.rows) != target_ids.size())
        throw model_error("sequence_ce: step count mismatch");
    const int V = logits.cols;
    double acc = 0.0;
    for (int t = 0; t < logits.rows; ++t) {
        const int target = target_ids[size_t(t)];
        if (target < 0 || target >= V)
            throw data_error("sequence_ce: target id " + std::to_string(target) +
                             " out of range [0," + std::to_string(V) + ")");
        const double* row = logits.row(t);
        double m = row[0];
        for (int j = 1; j < V; ++j) m = std::max(m, row[j]);
        double lse = 0.0;
        for (int j = 0; j < V; ++j) lse += std::exp(row[j] - m);
        acc += m + std::log(lse) - row[target];
    }
    return reduction == Reduction::Mean ? acc / logits.rows : acc;
}

double melody_bce(const Mat& activations, const Mat& multi_hot, Reduction reduction) {
    if (activations.rows != multi_hot.rows || activations.cols != multi_hot.cols)
        throw model_error("melody_bce: shape mismatch");
    double acc = 0.0;
    const size_t n = activations.v.size();
    for (size_t i = 0; i < n; ++i) {
        const double a = clamp_prob(activations.v[i]);
        const double t = multi_hot.v[i];
        acc += -(t * std::log(a) + (1.0 - t) * std::log(1.0 - a));
    }
    return reduction == Reduction::Mean ? acc / double(n) : acc;
}

double cross_decoder_adversary(const Mat& activations, Reduction reduction) {
    double acc = 0.0;
    const size_t n = activations.v.size();
    if (n == 0) throw model_error("cross_decoder_adversary: empty activations");
    for (double a : activations.v) acc += -std::log(1.0 - clamp_prob(a));
    return reduction == Reduction::Mean ? acc / double(n) : acc;
}

double style_ce(std::span<const double> probs, int label) {
    if (label < 0 || size_t(label) >= probs.size())
        throw data_error("style_ce: label " + std::to_string(label) + " out of range");
    return -std::log(clamp_prob(probs[size_t(label)]));
}

double adversary_entropy(std::span<const double> probs) {
    double h = 0.0;
    for (double p : probs)
        if (p > 0.0) h -= p * std::log(p);
    return h;
}

LossReport total_loss(double recon_pitch, double recon_rhythm, double recon_melody,
                      double kl_total, double adv_pitch, double adv_rhythm,
                      double style_ce_value, double adversary_entropy_value,
                      double beta, const AblationFlags& flags) {
    LossReport r;
    r.recon_pitch = recon_pitch;
    r.recon_rhythm = recon_rhythm;
    r.recon_melody = recon_melody;
    r.kl_total = kl_total;
    r.adv_pitch = flags.adv_pr ? adv_pitch : 0.0;
    r.adv_rhythm = flags.adv_pr ? adv_rhythm : 0.0;
    r.style_ce = flags.dis_zs ? style_ce_value : 0.0;
    r.adversary_entropy = flags.adv_zc ? adversary_entropy_value : 0.0;
    r.beta = beta;
    r.total = r.recon_pitch + r.recon_rhythm + r.recon_melody + r.beta * r.kl_total +
              r.adv_pitch + r.adv_rhythm + r.style_ce - r.adversary_entropy;
    return r;
}

void softmax(std::span<const double> in, std::span<double> out) {
    if (in.size() != out.size() || in.empty())
        throw model_error("softmax: bad spans");
    double m = in[0];
    for (double x : in) m = std::max(m, x);
    double sum = 0.0;
    for (size_t i = 0; i < in.size(); ++i) {
        out[i] = std::exp(in[i] - m);
        sum += out[i];
    }
    for (size_t i = 0; i < out.size(); ++i) out[i] /= sum;
}

} // namespace folkvae::losses
