#pragma once

#include "folkvae/tensor.hpp"

#include <span>
#include <string>

namespace folkvae::losses {

// Numerical guards; logvars are clamped before exponentiation and
// probabilities before logs.
constexpr double kLogvarMin = -20.0;
constexpr double kLogvarMax = 20.0;
constexpr double kProbEps = 1e-7;

// Which objective terms participate. The three switchable terms mirror the
// trainer's ablation sets; a disabled term contributes exactly zero to the
// total and to gradients, and is reported as zero.
struct AblationFlags {
    bool adv_pr = true;   // cross-decoder suppression terms
    bool dis_zs = true;   // style classifier cross-entropy
    bool adv_zc = true;   // adversary entropy (enters the total negated)

    bool operator==(const AblationFlags&) const = default;
};

AblationFlags flags_from_name(const std::string& name);
std::string flags_to_name(const AblationFlags& flags);

// Reduction convention for the sequence losses. Mean keeps magnitudes
// batch/length independent; Sum reproduces the plain summed objective that
// the 0.15 KL weight was calibrated against.
enum class Reduction { Mean, Sum };

struct LossReport {
    double recon_pitch = 0.0;
    double recon_rhythm = 0.0;
    double recon_melody = 0.0;
    double kl_total = 0.0;
    double adv_pitch = 0.0;
    double adv_rhythm = 0.0;
    double style_ce = 0.0;
    double adversary_entropy = 0.0;
    double beta = 0.0;
    double total = 0.0;

    bool all_finite() const;
    // name of the first non-finite component, or empty
    std::string first_non_finite() const;
    std::string to_json_line() const;
};

double clamp_logvar(double lv);
double clamp_prob(double p);

// 0.5 * sum(mean^2 + exp(logvar) - logvar - 1), logvar clamped
double kl_gaussian(std::span<const double> mean, std::span<const double> logvar);

// mean (or sum) over steps of -log softmax(logits_t)[target_t]
double sequence_ce(const Mat& logits, std::span<const int> target_ids,
                   Reduction reduction = Reduction::Mean);

// mean (or sum) over elements of -[t*log a + (1-t)*log(1-a)], clamped
double melody_bce(const Mat& activations, const Mat& multi_hot,
                  Reduction reduction = Reduction::Mean);

// BCE against the all-zero target: mean (or sum) over elements of -log(1-a)
double cross_decoder_adversary(const Mat& activations,
                               Reduction reduction = Reduction::Mean);

// -log probs[label]
double style_ce(std::span<const double> probs, int label);

// Shannon entropy in nats, 0*log 0 := 0
double adversary_entropy(std::span<const double> probs);

// Assembles the overall objective. Disabled parts are zeroed in the report;
// the returned total always reproduces
//   recon_p + recon_r + recon_m + beta*kl + adv_p + adv_r + style - entropy
// exactly from the report fields.
LossReport total_loss(double recon_pitch, double recon_rhythm, double recon_melody,
                      double kl_total, double adv_pitch, double adv_rhythm,
                      double style_ce_value, double adversary_entropy_value,
                      double beta, const AblationFlags& flags);

// stable softmax, out and in may alias
void softmax(std::span<const double> in, std::span<double> out);

} // namespace folkvae::losses
