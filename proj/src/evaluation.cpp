#include "sdnet/evaluation.hpp"

#include <map>
#include <set>

namespace sdnet {
namespace {

double hard_dice(std::int64_t intersection, std::int64_t pred_area, std::int64_t true_area) {
  if (pred_area + true_area == 0) return 1.0;
  return 2.0 * static_cast<double>(intersection) / static_cast<double>(pred_area + true_area);
}

}  // namespace

double dice_score(const MaskMap& m_pred, const MaskMap& m_true, double threshold) {
  if (!m_pred.pixels.same_shape(m_true.pixels)) {
    throw ShapeError("dice_score: mask shapes differ");
  }
  std::int64_t inter = 0;
  std::int64_t pred_area = 0;
  std::int64_t true_area = 0;
  for (std::size_t i = 0; i < m_pred.pixels.size(); ++i) {
    const bool p = m_pred.pixels.data[i] >= threshold;
    const bool t = m_true.pixels.data[i] >= 0.5f;
    inter += p && t;
    pred_area += p;
    true_area += t;
  }
  return hard_dice(inter, pred_area, true_area);
}

std::vector<double> dice_scores(const torch::Tensor& m_pred, const torch::Tensor& m_true, double threshold) {
  if (!m_pred.sizes().equals(m_true.sizes())) {
    throw ShapeError("dice_scores: shape mismatch " + c10::str(m_pred.sizes()) + " vs " + c10::str(m_true.sizes()));
  }
  const auto b = m_pred.size(0);
  const auto p = m_pred.detach().ge(threshold).reshape({b, -1}).to(torch::kInt64);
  const auto t = m_true.detach().ge(0.5).reshape({b, -1}).to(torch::kInt64);
  const auto inter = (p * t).sum(1);
  const auto pa = p.sum(1);
  const auto ta = t.sum(1);
  std::vector<double> out(static_cast<std::size_t>(b));
  for (std::int64_t i = 0; i < b; ++i) {
    out[static_cast<std::size_t>(i)] =
        hard_dice(inter[i].item<std::int64_t>(), pa[i].item<std::int64_t>(), ta[i].item<std::int64_t>());
  }
  return out;
}

MetricRecord evaluate_segmenter(const Segmenter& segment, const std::vector<LabelledSample>& test_set,
                                const SplitSpec* split) {
  if (split != nullptr) {
    const std::set<std::string> train(split->train.begin(), split->train.end());
    for (const auto& s : test_set) {
      if (train.contains(s.subject_id)) {
        throw LeakageError("test subject '" + s.subject_id + "' is part of the training split");
      }
    }
  }

  if (test_set.empty()) throw ArgumentError("evaluation needs at least one test slice");

  std::map<std::string, std::pair<double, std::int64_t>> sums;
  std::vector<std::string> order;
  constexpr std::size_t kBatch = 32;
  for (std::size_t start = 0; start < test_set.size(); start += kBatch) {
    const std::size_t end = std::min(test_set.size(), start + kBatch);
    std::vector<const Grid*> images;
    std::vector<const Grid*> masks;
    for (std::size_t i = start; i < end; ++i) {
      images.push_back(&test_set[i].image.pixels);
      masks.push_back(&test_set[i].mask.pixels);
    }
    const auto pred = segment(stack_grids(images));
    const auto scores = dice_scores(pred, stack_grids(masks));
    for (std::size_t i = start; i < end; ++i) {
      auto [it, inserted] = sums.try_emplace(test_set[i].subject_id, 0.0, 0);
      if (inserted) order.push_back(test_set[i].subject_id);
      it->second.first += scores[i - start];
      it->second.second += 1;
    }
  }

  MetricRecord record;
  double total = 0.0;
  for (const auto& subject : order) {
    const auto& [sum, count] = sums.at(subject);
    const double mean = sum / static_cast<double>(count);
    record.per_subject.emplace_back(subject, mean);
    total += mean;
  }
  record.mean_dice = total / static_cast<double>(order.size());
  return record;
}

MetricRecord evaluate_model(NetworkParams& params, const std::vector<LabelledSample>& test_set,
                            const SplitSpec* split) {
  InferenceScope scope(params);
  const auto dtype = params.decomposer->parameters().front().scalar_type();
  return evaluate_segmenter([&](const torch::Tensor& x) { return params.decomposer->segment(x.to(dtype)); },
                            test_set, split);
}

}  // namespace sdnet
