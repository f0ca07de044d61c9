#include "rrra/adapter/adapter.hpp"

namespace rrra::adapter {

namespace {
std::atomic<std::uint64_t> g_norm_loss_evaluations{0};
}

std::uint64_t norm_loss_evaluations() { return g_norm_loss_evaluations.load(); }
void reset_norm_loss_evaluations() { g_norm_loss_evaluations.store(0); }
void count_norm_loss_evaluation(std::uint64_t n) { g_norm_loss_evaluations.fetch_add(n); }

}  // namespace rrra::adapter
