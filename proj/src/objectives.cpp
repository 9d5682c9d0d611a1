#include "sdnet/objectives.hpp"

#include <cmath>
#include <iomanip>

namespace sdnet {
namespace {

void same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.sizes().equals(b.sizes())) {
    throw ShapeError(std::string(what) + ": shape mismatch " + c10::str(a.sizes()) + " vs " + c10::str(b.sizes()));
  }
}

}  // namespace

torch::Tensor loss_rec(const torch::Tensor& x, const torch::Tensor& x_hat) {
  same_shape(x, x_hat, "loss_rec");
  return (x - x_hat).abs().mean();
}

torch::Tensor loss_dice(const torch::Tensor& m_true, const torch::Tensor& m_pred, double eps) {
  same_shape(m_true, m_pred, "loss_dice");
  const auto t = m_true.reshape({m_true.size(0), -1});
  const auto p = m_pred.reshape({m_pred.size(0), -1});
  const auto dice = (2.0 * (t * p).sum(1) + eps) / (t.sum(1) + p.sum(1) + eps);
  return (1.0 - dice).mean();
}

torch::Tensor loss_image_supervised(const torch::Tensor& x, const std::optional<torch::Tensor>& m_true,
                                    const torch::Tensor& z, Reconstructor& g) {
  if (!m_true || !m_true->defined()) {
    throw UsageError("L_I needs a ground-truth mask; it is undefined for unlabelled samples");
  }
  return loss_rec(x, g->forward(*m_true, z));
}

torch::Tensor lsgan_disc_loss(const torch::Tensor& real_scores, const torch::Tensor& fake_scores) {
  return fake_scores.square().mean() + (real_scores - 1.0).square().mean();
}

torch::Tensor lsgan_gen_loss(const torch::Tensor& fake_scores) { return (fake_scores - 1.0).square().mean(); }

AdversarialLosses adv_losses_image(Discriminator& d_x, const torch::Tensor& x_real, const torch::Tensor& x_fake) {
  same_shape(x_real, x_fake, "adv_losses_image");
  return AdversarialLosses{lsgan_disc_loss(d_x->forward(x_real), d_x->forward(x_fake.detach())),
                           lsgan_gen_loss(d_x->forward(x_fake))};
}

AdversarialLosses adv_losses_mask(Discriminator& d_m, const torch::Tensor& m_real, const torch::Tensor& m_fake) {
  same_shape(m_real, m_fake, "adv_losses_mask");
  if (!(m_real.eq(0) | m_real.eq(1)).all().item<bool>()) {
    throw ArgumentError("real masks for the mask discriminator must be binary");
  }
  return AdversarialLosses{lsgan_disc_loss(d_m->forward(m_real), d_m->forward(m_fake.detach())),
                           lsgan_gen_loss(d_m->forward(m_fake))};
}

bool LossReport::valid() const {
  for (const auto& v : {l_rec, l_m, l_i, a_i_gen, a_m_gen, d_x_loss, d_m_loss}) {
    if (v && !std::isfinite(*v)) return false;
  }
  if (l_m && (*l_m < 0.0 || *l_m > 1.0)) return false;
  return std::isfinite(composite);
}

void write_csv_row(std::ostream& out, const LossReport& r) {
  auto cell = [&out](const std::optional<double>& v) {
    out << ',';
    if (v) out << std::setprecision(9) << *v;
  };
  out << r.step << ',' << r.kind;
  cell(r.l_rec);
  cell(r.l_m);
  cell(r.l_i);
  cell(r.a_i_gen);
  cell(r.a_m_gen);
  cell(r.d_x_loss);
  cell(r.d_m_loss);
  cell(r.composite);
  out << '\n';
}

}  // namespace sdnet
