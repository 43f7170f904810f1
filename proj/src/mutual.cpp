#include "grapy/mutual.hpp"

namespace grapy {

RoundRobinSampler::RoundRobinSampler(std::vector<std::size_t> sizes, std::size_t batch_size,
                                     std::uint64_t seed)
    : sizes_(std::move(sizes)), batch_size_(std::max<std::size_t>(1, batch_size)), seed_(seed) {
  if (sizes_.empty()) throw std::invalid_argument("round robin over no datasets");
  for (std::size_t d = 0; d < sizes_.size(); ++d) {
    if (sizes_[d] == 0) throw std::invalid_argument("dataset " + std::to_string(d + 1) + " is empty");
    orders_.push_back(epoch_order(sizes_[d], seed_ + 101 * d, 0));
  }
  cursor_.assign(sizes_.size(), 0);
  pass_.assign(sizes_.size(), 0);
}

std::pair<int, std::vector<std::size_t>> RoundRobinSampler::next() {
  const std::size_t d = turn_++ % sizes_.size();
  std::vector<std::size_t> idx;
  // batches never straddle a reshuffle; the last one of a pass may be short
  if (cursor_[d] >= sizes_[d]) {
    ++pass_[d];
    orders_[d] = epoch_order(sizes_[d], seed_ + 101 * d, pass_[d]);
    cursor_[d] = 0;
  }
  const std::size_t end = std::min(sizes_[d], cursor_[d] + batch_size_);
  for (std::size_t i = cursor_[d]; i < end; ++i) idx.push_back(orders_[d][i]);
  cursor_[d] = end;
  return {static_cast<int>(d) + 1, std::move(idx)};
}

}  // namespace grapy
