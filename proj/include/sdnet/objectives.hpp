#pragma once

#include <optional>
#include <ostream>
#include <string>

#include <torch/torch.h>

#include "sdnet/errors.hpp"
#include "sdnet/networks.hpp"

namespace sdnet {

/// Weights of the overall cost, in term order (L_M, A_M, L_rec, L_I, A_I).
struct LossWeights {
  double mask_dice = 10.0;            // λ1
  double mask_adversarial = 10.0;     // λ2
  double reconstruction = 1.0;        // λ3
  double image_supervised = 10.0;     // λ4
  double image_adversarial = 1.0;     // λ5

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

inline constexpr double kDiceEpsilon = 1e-6;

/// Mean absolute difference. Raises ShapeError on mismatched shapes.
torch::Tensor loss_rec(const torch::Tensor& x, const torch::Tensor& x_hat);

/// 1 - soft Dice per sample, averaged over the batch:
/// 1 - (2·Σ t·p + ε) / (Σ t + Σ p + ε).
torch::Tensor loss_dice(const torch::Tensor& m_true, const torch::Tensor& m_pred, double eps = kDiceEpsilon);

/// L1 between x and g(ground-truth mask, z). An undefined mask (unlabelled
/// sample) raises UsageError.
torch::Tensor loss_image_supervised(const torch::Tensor& x, const std::optional<torch::Tensor>& m_true,
                                    const torch::Tensor& z, Reconstructor& g);

/// Least-squares adversarial pair on discriminator scores.
struct AdversarialLosses {
  torch::Tensor disc_loss;  // mean D(fake)^2 + mean (D(real)-1)^2, fake detached
  torch::Tensor gen_loss;   // mean (D(fake)-1)^2
};

torch::Tensor lsgan_disc_loss(const torch::Tensor& real_scores, const torch::Tensor& fake_scores);
torch::Tensor lsgan_gen_loss(const torch::Tensor& fake_scores);

AdversarialLosses adv_losses_image(Discriminator& d_x, const torch::Tensor& x_real, const torch::Tensor& x_fake);
/// Raises ArgumentError when `m_real` is not binary.
AdversarialLosses adv_losses_mask(Discriminator& d_m, const torch::Tensor& m_real, const torch::Tensor& m_fake);

/// Generator-side terms of one forward pass. Absent terms stay empty.
template <typename T>
struct GeneratorTerms {
  std::optional<T> mask_dice;          // L_M
  std::optional<T> mask_adversarial;   // A_M
  std::optional<T> reconstruction;     // L_rec
  std::optional<T> image_supervised;   // L_I
  std::optional<T> image_adversarial;  // A_I
};

namespace detail {
template <typename T>
const T& require(const std::optional<T>& term, const char* name) {
  if (!term) throw UsageError(std::string("composite cost is missing term ") + name);
  return *term;
}
}  // namespace detail

/// λ1 L_M + λ2 A_M + λ3 L_rec + λ4 L_I + λ5 A_I. Works for tensors and doubles.
template <typename T>
T composite_labelled(const GeneratorTerms<T>& t, const LossWeights& w) {
  return w.mask_dice * detail::require(t.mask_dice, "L_M") +
         w.mask_adversarial * detail::require(t.mask_adversarial, "A_M") +
         w.reconstruction * detail::require(t.reconstruction, "L_rec") +
         w.image_supervised * detail::require(t.image_supervised, "L_I") +
         w.image_adversarial * detail::require(t.image_adversarial, "A_I");
}

/// λ2 A_M + λ3 L_rec + λ5 A_I: the labelled cost without its first and fourth terms.
template <typename T>
T composite_unlabelled(const GeneratorTerms<T>& t, const LossWeights& w) {
  return w.mask_adversarial * detail::require(t.mask_adversarial, "A_M") +
         w.reconstruction * detail::require(t.reconstruction, "L_rec") +
         w.image_adversarial * detail::require(t.image_adversarial, "A_I");
}

/// Evaluated loss values of one training step. Terms a model variant does not
/// use are left empty.
struct LossReport {
  std::int64_t step = 0;
  std::string kind;  // "labelled" | "unlabelled"
  std::optional<double> l_rec;
  std::optional<double> l_m;
  std::optional<double> l_i;
  std::optional<double> a_i_gen;
  std::optional<double> a_m_gen;
  std::optional<double> d_x_loss;
  std::optional<double> d_m_loss;
  double composite = 0.0;

  /// True when every present value is finite and the Dice term is in [0,1].
  bool valid() const;
  friend bool operator==(const LossReport&, const LossReport&) = default;
};

/// Column order of the per-step CSV. Absent terms are empty cells.
inline constexpr const char* kLossCsvHeader = "step,kind,l_rec,l_m,l_i,a_i_gen,a_m_gen,d_x_loss,d_m_loss,composite";
void write_csv_row(std::ostream& out, const LossReport& r);

}  // namespace sdnet
