#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "kpcodec/bitio.hpp"
#include "kpcodec/errors.hpp"
#include "kpcodec/kpquant.hpp"

namespace kpcodec {

// Identifier written to the stream header for the coder below.
inline constexpr std::uint8_t kCoderVariant = 1;

namespace arith {
inline constexpr int kPrecision = 47;
inline constexpr std::uint64_t kTop = (std::uint64_t{1} << kPrecision) - 1;
inline constexpr std::uint64_t kHalf = std::uint64_t{1} << (kPrecision - 1);
inline constexpr std::uint64_t kQuarter = std::uint64_t{1} << (kPrecision - 2);
inline constexpr std::uint64_t kThreeQuarters = 3 * kQuarter;
inline constexpr std::uint32_t kMaxTotal = 1u << 16;
}  // namespace arith

/// Binary-output arithmetic encoder (47-bit interval, underflow bits held back
/// until resolved). Termination costs two bits plus pending bits; a coder that
/// never saw a symbol emits nothing.
class ArithmeticEncoder {
public:
    explicit ArithmeticEncoder(BitWriter& out) : out_(out) {}

    void encode(std::uint32_t cum_low, std::uint32_t cum_high, std::uint32_t total) {
        using namespace arith;
        ++symbols_;
        const std::uint64_t range = high_ - low_ + 1;
        high_ = low_ + range * cum_high / total - 1;
        low_ = low_ + range * cum_low / total;
        for (;;) {
            if (high_ < kHalf) {
                emit(false);
            } else if (low_ >= kHalf) {
                emit(true);
                low_ -= kHalf;
                high_ -= kHalf;
            } else if (low_ >= kQuarter && high_ < kThreeQuarters) {
                ++pending_;
                low_ -= kQuarter;
                high_ -= kQuarter;
            } else {
                break;
            }
            low_ <<= 1;
            high_ = (high_ << 1) | 1u;
        }
    }

    void finish() {
        if (finished_ || symbols_ == 0) {
            finished_ = true;
            return;
        }
        ++pending_;
        emit(low_ >= arith::kQuarter);
        finished_ = true;
    }

    std::size_t symbols() const noexcept { return symbols_; }

private:
    void emit(bool bit) {
        out_.write_bit(bit);
        for (; pending_ > 0; --pending_) out_.write_bit(!bit);
    }

    BitWriter& out_;
    std::uint64_t low_ = 0;
    std::uint64_t high_ = arith::kTop;
    std::uint64_t pending_ = 0;
    std::size_t symbols_ = 0;
    bool finished_ = false;
};

class ArithmeticDecoder {
public:
    explicit ArithmeticDecoder(BitReader& in) : in_(in) {}

    /// Cumulative-frequency target of the next symbol.
    std::uint32_t target(std::uint32_t total) {
        prime();
        const std::uint64_t range = high_ - low_ + 1;
        const std::uint64_t cum = ((value_ - low_ + 1) * total - 1) / range;
        if (cum >= total) throw CorruptStream(in_.position(), "arithmetic decoder target out of range");
        return static_cast<std::uint32_t>(cum);
    }

    void consume(std::uint32_t cum_low, std::uint32_t cum_high, std::uint32_t total) {
        using namespace arith;
        const std::uint64_t range = high_ - low_ + 1;
        high_ = low_ + range * cum_high / total - 1;
        low_ = low_ + range * cum_low / total;
        if (value_ < low_ || value_ > high_)
            throw CorruptStream(in_.position(), "arithmetic decoder left its interval");
        for (;;) {
            if (high_ < kHalf) {
                // nothing to subtract
            } else if (low_ >= kHalf) {
                low_ -= kHalf;
                high_ -= kHalf;
                value_ -= kHalf;
            } else if (low_ >= kQuarter && high_ < kThreeQuarters) {
                low_ -= kQuarter;
                high_ -= kQuarter;
                value_ -= kQuarter;
            } else {
                break;
            }
            low_ <<= 1;
            high_ = (high_ << 1) | 1u;
            value_ = (value_ << 1) | static_cast<std::uint64_t>(in_.read_bit_or_zero());
        }
    }

private:
    void prime() {
        if (primed_) return;
        for (int i = 0; i < arith::kPrecision; ++i)
            value_ = (value_ << 1) | static_cast<std::uint64_t>(in_.read_bit_or_zero());
        primed_ = true;
    }

    BitReader& in_;
    std::uint64_t low_ = 0;
    std::uint64_t high_ = arith::kTop;
    std::uint64_t value_ = 0;
    bool primed_ = false;
};

/// Adaptive frequency table: every count starts at its initial value (>= 1),
/// grows by `increment` per coded symbol, and the table is halved once the
/// total exceeds 2^16.
class AdaptiveModel {
public:
    explicit AdaptiveModel(std::size_t alphabet, std::uint32_t increment = 1)
        : freq_(alphabet, 1u), total_(static_cast<std::uint32_t>(alphabet)), increment_(increment) {}

    AdaptiveModel(std::vector<std::uint32_t> initial, std::uint32_t increment)
        : freq_(std::move(initial)), total_(0), increment_(increment) {
        for (auto& f : freq_) f = std::max<std::uint32_t>(f, 1u);
        for (auto f : freq_) total_ += f;
        while (total_ > arith::kMaxTotal) rescale();
    }

    std::size_t alphabet() const noexcept { return freq_.size(); }
    std::uint32_t total() const noexcept { return total_; }
    std::uint32_t frequency(std::size_t s) const { return freq_.at(s); }

    /// Ideal code length of `s` under the current state, in bits.
    double cost(std::size_t s) const { return -std::log2(static_cast<double>(freq_[s]) / total_); }

    void encode(std::size_t s, ArithmeticEncoder& enc) {
        std::uint32_t lo = 0;
        for (std::size_t i = 0; i < s; ++i) lo += freq_[i];
        enc.encode(lo, lo + freq_[s], total_);
        update(s);
    }

    std::size_t decode(ArithmeticDecoder& dec) {
        const std::uint32_t t = dec.target(total_);
        std::uint32_t lo = 0;
        std::size_t s = 0;
        while (lo + freq_[s] <= t) lo += freq_[s++];
        dec.consume(lo, lo + freq_[s], total_);
        update(s);
        return s;
    }

    void update(std::size_t s) {
        freq_[s] += increment_;
        total_ += increment_;
        if (total_ > arith::kMaxTotal) rescale();
    }

private:
    void rescale() {
        total_ = 0;
        for (auto& f : freq_) {
            f = (f + 1) / 2;
            total_ += f;
        }
    }

    std::vector<std::uint32_t> freq_;
    std::uint32_t total_;
    std::uint32_t increment_;
};

// ----------------------------------------------------- location coding

struct LocationContextConfig {
    int context_range = 49;
    int window = 49;  // causal cells summed to form the context
    // Optional initial counts: context_range pairs (zero count, one count).
    std::vector<std::uint32_t> table;
};

class LocationContextModel {
public:
    explicit LocationContextModel(const LocationContextConfig& cfg) : cfg_(cfg) {
        if (cfg.context_range < 1 || cfg.window < 1) throw ConfigError("context range and window must be >= 1");
        if (!cfg.table.empty() && cfg.table.size() != 2 * static_cast<std::size_t>(cfg.context_range))
            throw ConfigError("context table must hold 2 counts per context");
        models_.reserve(static_cast<std::size_t>(cfg.context_range));
        for (int c = 0; c < cfg.context_range; ++c) {
            if (cfg.table.empty())
                models_.emplace_back(2);
            else
                models_.emplace_back(std::vector<std::uint32_t>{cfg.table[2 * c], cfg.table[2 * c + 1]}, 1u);
        }
    }

    int context_for(int occupied_in_window) const { return std::min(cfg_.context_range - 1, occupied_in_window); }
    AdaptiveModel& model(int ctx) { return models_[static_cast<std::size_t>(ctx)]; }
    int window() const noexcept { return cfg_.window; }

private:
    LocationContextConfig cfg_;
    std::vector<AdaptiveModel> models_;
};

namespace detail {

// Running occupancy count over the last `window` scanned cells.
class CausalWindow {
public:
    explicit CausalWindow(int window) : ring_(static_cast<std::size_t>(window), 0) {}

    int sum() const noexcept { return sum_; }

    void push(bool occupied) {
        sum_ -= ring_[head_];
        ring_[head_] = occupied ? 1 : 0;
        sum_ += ring_[head_];
        head_ = (head_ + 1) % ring_.size();
    }

private:
    std::vector<std::uint8_t> ring_;
    std::size_t head_ = 0;
    int sum_ = 0;
};

}  // namespace detail

/// Codes a binary occupancy map of the grid in raster order. Each cell's
/// context is the number of occupied cells among the preceding `window`
/// scanned cells, clamped to context_range - 1. Duplicate cells collapse.
/// Returns the occupied cells in raster order.
inline std::vector<QuantizedLocation> encode_locations(std::span<const QuantizedLocation> locs,
                                                       const LocationGrid& grid,
                                                       const LocationContextConfig& cfg,
                                                       ArithmeticEncoder& enc) {
    std::vector<QuantizedLocation> cells(locs.begin(), locs.end());
    for (const auto& q : cells)
        if (!grid.contains(q))
            throw LocationOutOfGrid("cell (" + std::to_string(q.gx) + ", " + std::to_string(q.gy) +
                                    ") is outside the location grid");
    std::sort(cells.begin(), cells.end());
    cells.erase(std::unique(cells.begin(), cells.end()), cells.end());

    LocationContextModel model(cfg);
    detail::CausalWindow win(model.window());
    std::size_t next = 0;
    for (int gy = 0; gy < grid.rows(); ++gy) {
        for (int gx = 0; gx < grid.cols(); ++gx) {
            const bool occ = next < cells.size() && cells[next].gx == gx && cells[next].gy == gy;
            if (occ) ++next;
            model.model(model.context_for(win.sum())).encode(occ ? 1 : 0, enc);
            win.push(occ);
        }
    }
    return cells;
}

inline std::vector<QuantizedLocation> decode_locations(const LocationGrid& grid, const LocationContextConfig& cfg,
                                                       ArithmeticDecoder& dec) {
    std::vector<QuantizedLocation> cells;
    LocationContextModel model(cfg);
    detail::CausalWindow win(model.window());
    for (int gy = 0; gy < grid.rows(); ++gy) {
        for (int gx = 0; gx < grid.cols(); ++gx) {
            const bool occ = model.model(model.context_for(win.sum())).decode(dec) == 1;
            if (occ) cells.push_back({gx, gy});
            win.push(occ);
        }
    }
    return cells;
}

// ------------------------------------------- update-frame symbol coding

enum class BufferMode : std::uint8_t { Skip = 0, Inter = 1, Drop = 2 };

inline constexpr int kMaxLocationResidual = 16;
inline constexpr int kScaleRatioLevels = 5;
inline constexpr int kNoScaleChange = 2;
inline constexpr int kMaxOrientationResidual = 4;

/// Differential correction of one predicted keypoint.
struct InterResidual {
    int dx = 0;              // grid cells, [-16, 16]
    int dy = 0;              // grid cells, [-16, 16]
    int scale_idx = kNoScaleChange;  // [0, 4]
    int dtheta_idx = 0;      // orientation index steps, [-4, 4]
    std::size_t prev_ref = 0;  // buffer entry this corrects; implied by position in the stream

    bool in_range() const noexcept {
        return std::abs(dx) <= kMaxLocationResidual && std::abs(dy) <= kMaxLocationResidual &&
               scale_idx >= 0 && scale_idx < kScaleRatioLevels && std::abs(dtheta_idx) <= kMaxOrientationResidual;
    }

    friend bool operator==(const InterResidual&, const InterResidual&) = default;
};

inline constexpr std::uint32_t kSymbolIncrement = 8;

/// Fresh per-frame adaptive models for the update-frame symbols.
struct UpdateModels {
    AdaptiveModel mode{3, kSymbolIncrement};
    AdaptiveModel dx{2 * kMaxLocationResidual + 1, kSymbolIncrement};
    AdaptiveModel dy{2 * kMaxLocationResidual + 1, kSymbolIncrement};
    AdaptiveModel scale{kScaleRatioLevels, kSymbolIncrement};
    AdaptiveModel dtheta{2 * kMaxOrientationResidual + 1, kSymbolIncrement};
};

inline void encode_inter_residuals(std::span<const InterResidual> residuals, UpdateModels& m,
                                   ArithmeticEncoder& enc) {
    for (const auto& r : residuals) {
        if (!r.in_range()) throw ResidualOutOfRange("inter residual outside the coded alphabets");
        m.dx.encode(static_cast<std::size_t>(r.dx + kMaxLocationResidual), enc);
        m.dy.encode(static_cast<std::size_t>(r.dy + kMaxLocationResidual), enc);
        m.scale.encode(static_cast<std::size_t>(r.scale_idx), enc);
        m.dtheta.encode(static_cast<std::size_t>(r.dtheta_idx + kMaxOrientationResidual), enc);
    }
}

inline std::vector<InterResidual> decode_inter_residuals(std::size_t count, UpdateModels& m,
                                                         ArithmeticDecoder& dec) {
    std::vector<InterResidual> out(count);
    for (auto& r : out) {
        r.dx = static_cast<int>(m.dx.decode(dec)) - kMaxLocationResidual;
        r.dy = static_cast<int>(m.dy.decode(dec)) - kMaxLocationResidual;
        r.scale_idx = static_cast<int>(m.scale.decode(dec));
        r.dtheta_idx = static_cast<int>(m.dtheta.decode(dec)) - kMaxOrientationResidual;
    }
    return out;
}

/// Mode symbols for every buffered keypoint, then the residuals of the Inter
/// entries, in buffer order.
inline void encode_update_symbols(std::span<const BufferMode> modes, std::span<const InterResidual> residuals,
                                  ArithmeticEncoder& enc) {
    UpdateModels m;
    std::size_t inter = 0;
    for (auto md : modes) {
        m.mode.encode(static_cast<std::size_t>(md), enc);
        if (md == BufferMode::Inter) ++inter;
    }
    if (inter != residuals.size()) throw ResidualOutOfRange("residual count does not match Inter modes");
    encode_inter_residuals(residuals, m, enc);
}

inline std::pair<std::vector<BufferMode>, std::vector<InterResidual>> decode_update_symbols(
    std::size_t buffer_size, ArithmeticDecoder& dec) {
    UpdateModels m;
    std::vector<BufferMode> modes(buffer_size);
    std::size_t inter = 0;
    for (auto& md : modes) {
        md = static_cast<BufferMode>(m.mode.decode(dec));
        if (md == BufferMode::Inter) ++inter;
    }
    auto residuals = decode_inter_residuals(inter, m, dec);
    std::size_t k = 0;
    for (std::size_t i = 0; i < modes.size(); ++i)
        if (modes[i] == BufferMode::Inter) residuals[k++].prev_ref = i;
    return {std::move(modes), std::move(residuals)};
}

}  // namespace kpcodec
