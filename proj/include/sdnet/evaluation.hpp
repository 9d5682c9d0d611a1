#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "sdnet/data_pipeline.hpp"
#include "sdnet/networks.hpp"

namespace sdnet {

/// Hard Dice 2|A∩B|/(|A|+|B|) after thresholding the prediction (>= threshold).
/// Two empty masks score 1.
double dice_score(const MaskMap& m_pred, const MaskMap& m_true, double threshold = 0.5);
/// Per-sample hard Dice for [B,1,H,W] tensors.
std::vector<double> dice_scores(const torch::Tensor& m_pred, const torch::Tensor& m_true, double threshold = 0.5);

struct MetricRecord {
  std::string variant;
  std::string dataset;
  std::int64_t fold = 0;
  std::int64_t n_labelled = 0;
  std::vector<std::pair<std::string, double>> per_subject;
  double mean_dice = 0.0;
};

/// Maps a batch of images [B,1,H,W] to soft masks of the same shape.
using Segmenter = std::function<torch::Tensor(const torch::Tensor&)>;

/// Averages Dice over each subject's slices, then over subjects. When `split`
/// is given, any test subject among its training subjects raises LeakageError.
/// An empty test set raises ArgumentError.
MetricRecord evaluate_segmenter(const Segmenter& segment, const std::vector<LabelledSample>& test_set,
                                const SplitSpec* split = nullptr);
/// Evaluates the decomposer's mask head in inference mode.
MetricRecord evaluate_model(NetworkParams& params, const std::vector<LabelledSample>& test_set,
                            const SplitSpec* split = nullptr);

}  // namespace sdnet
