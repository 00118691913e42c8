#include "pdnrl/parallel.hpp"

namespace pdnrl {

namespace {
std::atomic<std::size_t> g_jobs{1};
}

std::size_t default_jobs() { return g_jobs.load(); }

void set_default_jobs(std::size_t jobs) { g_jobs.store(jobs == 0 ? 1 : jobs); }

}  // namespace pdnrl
