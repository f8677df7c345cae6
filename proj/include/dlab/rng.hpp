#pragma once

#include <cstdint>
#include <span>

namespace dlab {

// Deterministic stream RNG: xoshiro256++ seeded via splitmix64 from a
// (master_seed, stream_id) pair.  Distinct ids give independent streams and
// the byte stream depends only on the inputs, never on the platform's
// std::*_distribution internals.
class RngStream {
public:
    explicit RngStream(std::uint64_t master_seed, std::uint64_t stream_id = 0);

    std::uint64_t next_u64();
    double uniform();   // [0, 1)
    double normal();    // N(0, 1)
    void fill_normal(std::span<double> out);

    // Child stream keyed by (master_seed, stream_id, child_id).
    RngStream substream(std::uint64_t child_id) const;

    std::uint64_t master_seed() const { return master_seed_; }
    std::uint64_t stream_id() const { return stream_id_; }

private:
    std::uint64_t state_[4] = {0, 0, 0, 0};
    std::uint64_t master_seed_ = 0;
    std::uint64_t stream_id_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace dlab
