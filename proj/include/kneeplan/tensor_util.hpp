#pragma once

#include <cstring>

#include <opencv2/core.hpp>
#include <torch/torch.h>

namespace kneeplan {

/// H x W float32 tensor sharing nothing with the source.
inline torch::Tensor mat_to_tensor(const cv::Mat1f& m) {
  cv::Mat1f contiguous = m.isContinuous() ? m : m.clone();
  return torch::from_blob(contiguous.data, {contiguous.rows, contiguous.cols}, torch::kFloat32).clone();
}

inline torch::Tensor mask_to_tensor(const cv::Mat1b& m) {
  cv::Mat1f f;
  m.convertTo(f, CV_32F);
  return mat_to_tensor(f);
}

/// 2-D tensor to an owning float matrix.
inline cv::Mat1f tensor_to_mat(const torch::Tensor& t) {
  const auto c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  cv::Mat1f m(static_cast<int>(c.size(0)), static_cast<int>(c.size(1)));
  std::memcpy(m.data, c.data_ptr<float>(), sizeof(float) * static_cast<std::size_t>(c.numel()));
  return m;
}

}  // namespace kneeplan
