#include "bubblelab/mc_engine.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <ostream>
#include <thread>

#include "bubblelab/error.hpp"
#include "bubblelab/rng.hpp"

namespace bubblelab {

namespace {

constexpr double kGridTol = 1e-12;

// Fills paths [first, last) of `batch`. `pick` returns the schedule index a
// path follows after `split_index` given its value at the split.
template <typename Pick>
void simulate_range(PathBatch& batch, std::uint64_t stream_key, const Schedule& head, std::size_t split_index,
                    Pick pick, std::size_t first, std::size_t last)
{
    const std::size_t n_times = batch.grid.size();
    const auto dim = static_cast<std::size_t>(batch.dimension);
    const auto& times = batch.grid.times();
    std::vector<double> head_sd(n_times, 0.0);
    for (std::size_t i = 0; i + 1 < n_times; ++i) {
        head_sd[i] = std::sqrt(head.integrated(times[i], times[i + 1]));
    }
    std::vector<std::vector<double>> branch_sd(batch.schedules.size(), std::vector<double>(n_times, 0.0));
    for (std::size_t s = 0; s < batch.schedules.size(); ++s) {
        for (std::size_t i = 0; i + 1 < n_times; ++i) {
            branch_sd[s][i] = std::sqrt(batch.schedules[s].integrated(times[i], times[i + 1]));
        }
    }

    for (std::size_t p = first; p < last; ++p) {
        PathStream stream(stream_key, p);
        double* row = batch.values.data() + p * n_times * dim;
        std::fill(row, row + dim, 0.0);
        std::uint8_t branch = 0;
        const std::vector<double>* sd = &head_sd;
        for (std::size_t i = 0; i + 1 < n_times; ++i) {
            if (i == split_index) {
                branch = pick(row[i * dim]);
                sd = &branch_sd[branch];
            }
            const double scale = (*sd)[i];
            for (std::size_t d = 0; d < dim; ++d) {
                const double z = stream.normal();
                row[(i + 1) * dim + d] = row[i * dim + d] + scale * z;
            }
        }
        if (split_index + 1 >= n_times && n_times > 0) {
            branch = pick(row[(n_times - 1) * dim]);
        }
        batch.schedule_index[p] = branch;
    }
}

template <typename Pick>
void run_partitioned(PathBatch& batch, std::uint64_t stream_key, const Schedule& head, std::size_t split_index,
                     Pick pick, unsigned workers)
{
    const std::size_t n = batch.n_paths;
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
    if (workers == 1) {
        simulate_range(batch, stream_key, head, split_index, pick, 0, n);
        return;
    }
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
        const std::size_t first = std::min(n, w * chunk);
        const std::size_t last = std::min(n, first + chunk);
        pool.emplace_back([&, first, last] { simulate_range(batch, stream_key, head, split_index, pick, first, last); });
    }
    for (auto& t : pool) {
        t.join();
    }
}

PathBatch empty_batch(const std::string& label, const TimeGrid& grid, std::size_t n_paths, int dimension,
                      std::uint64_t seed)
{
    require(grid.size() >= 1, "time grid must not be empty");
    require(n_paths >= 1, "n_paths must be positive");
    PathBatch batch;
    batch.prior_label = label;
    batch.grid = grid;
    batch.n_paths = n_paths;
    batch.dimension = dimension;
    batch.seed = seed;
    batch.values.assign(n_paths * grid.size() * static_cast<std::size_t>(dimension), 0.0);
    batch.schedule_index.assign(n_paths, 0);
    return batch;
}

} // namespace

TimeGrid::TimeGrid(std::vector<double> times) : times_(std::move(times))
{
    require(!times_.empty(), "time grid must not be empty");
    require(times_.front() == 0.0, "time grid must start at 0");
    for (std::size_t i = 1; i < times_.size(); ++i) {
        require(std::isfinite(times_[i]) && times_[i] > times_[i - 1], "time grid must be strictly increasing");
    }
}

TimeGrid TimeGrid::uniform(double horizon, std::size_t steps)
{
    require(horizon > 0.0 && steps >= 1, "uniform grid needs horizon > 0 and steps >= 1");
    std::vector<double> t(steps + 1);
    for (std::size_t i = 0; i <= steps; ++i) {
        t[i] = horizon * static_cast<double>(i) / static_cast<double>(steps);
    }
    t.back() = horizon;
    return TimeGrid(std::move(t));
}

TimeGrid TimeGrid::with_points(double horizon, std::size_t steps, const std::vector<double>& extra)
{
    std::vector<double> t = uniform(horizon, steps).times();
    for (double e : extra) {
        require(e >= 0.0 && e <= horizon, "extra grid points must lie in [0, horizon]");
        t.push_back(e);
    }
    std::sort(t.begin(), t.end());
    std::vector<double> merged;
    for (double v : t) {
        if (merged.empty() || v - merged.back() > kGridTol) {
            merged.push_back(v);
        } else if (std::find(extra.begin(), extra.end(), v) != extra.end()) {
            merged.back() = v;   // prefer the exact requested value
        }
    }
    merged.front() = 0.0;
    return TimeGrid(std::move(merged));
}

std::size_t TimeGrid::index_of(double t) const
{
    for (std::size_t i = 0; i < times_.size(); ++i) {
        if (std::abs(times_[i] - t) <= kGridTol) {
            return i;
        }
    }
    throw InvalidArgument("time " + format_double(t) + " is not on the grid");
}

bool TimeGrid::contains(double t) const
{
    return std::any_of(times_.begin(), times_.end(), [t](double v) { return std::abs(v - t) <= kGridTol; });
}

double PathView::value(std::size_t time_index, int coord) const
{
    return batch_->at(index_, time_index, coord);
}

std::span<const double> PathView::point(std::size_t time_index) const
{
    const auto dim = static_cast<std::size_t>(batch_->dimension);
    return {batch_->values.data() + (index_ * batch_->grid.size() + time_index) * dim, dim};
}

const Schedule& PathView::schedule() const
{
    return batch_->schedules[batch_->schedule_index[index_]];
}

const TimeGrid& PathView::grid() const { return batch_->grid; }
int PathView::dimension() const { return batch_->dimension; }

PathBatch simulate(const Prior& prior, const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed,
                   unsigned workers)
{
    require(grid.horizon() <= prior.horizon() + kGridTol, "time grid extends past the prior horizon");
    PathBatch batch = empty_batch(prior.label, grid, n_paths, prior.dimension, seed);
    batch.schedules = {prior.schedule};
    const auto key = derive_stream_key(seed, prior.label);
    run_partitioned(batch, key, prior.schedule, grid.size(), [](double) -> std::uint8_t { return 0; }, workers);
    return batch;
}

PathBatch simulate(const PastedPrior& prior, const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed,
                   unsigned workers)
{
    require(grid.horizon() <= prior.horizon() + kGridTol, "time grid extends past the prior horizon");
    const std::string label = prior.label();
    PathBatch batch = empty_batch(label, grid, n_paths, prior.dimension(), seed);
    const std::size_t split_index = prior.split_time > grid.horizon() ? grid.size() : grid.index_of(prior.split_time);
    batch.schedules = {prior.branch_one.schedule, prior.branch_two.schedule};
    const auto key = derive_stream_key(seed, label);
    const PathEvent event = prior.event;
    run_partitioned(
        batch, key, prior.base.schedule, split_index,
        [event](double value) -> std::uint8_t { return event.holds(value) ? 0 : 1; }, workers);
    return batch;
}

Estimate estimate_values(std::span<const double> samples)
{
    require(!samples.empty(), "cannot estimate from zero samples");
    const auto n = samples.size();
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(samples[i])) {
            throw NumericalFailure("non-finite functional value at sample " + std::to_string(i));
        }
        sum += samples[i];
    }
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (double v : samples) {
        ss += (v - mean) * (v - mean);
    }
    const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    return {mean, sd / std::sqrt(static_cast<double>(n)), n};
}

Estimate estimate(const PathBatch& batch, const PathFunctional& functional)
{
    std::vector<double> samples(batch.n_paths);
    for (std::size_t p = 0; p < batch.n_paths; ++p) {
        samples[p] = functional(batch.path(p));
    }
    return estimate_values(samples);
}

double quantile(std::vector<double> samples, double q)
{
    require(!samples.empty(), "quantile of empty sample");
    require(q >= 0.0 && q <= 1.0, "quantile level must lie in [0, 1]");
    std::sort(samples.begin(), samples.end());
    const double pos = q * static_cast<double>(samples.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, samples.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return samples[lo] + frac * (samples[hi] - samples[lo]);
}

RobustEstimate robust_estimate(const PriorFamily& family, const TimeGrid& grid, std::size_t n_paths,
                               std::uint64_t seed, const PathFunctional& functional, unsigned workers)
{
    RobustEstimate out;
    for (const auto& member : family.members) {
        const PathBatch batch = simulate(member, grid, n_paths, seed, workers);
        const Estimate e = estimate(batch, functional);
        out.members.push_back({member.label, e});
        if (out.members.size() == 1 || e.mean > out.best.mean) {
            out.best = e;
            out.argmax_label = member.label;
        }
    }
    return out;
}

void write_batch(const PathBatch& batch, const std::string& stem)
{
    {
        std::ofstream bin(stem + ".bin", std::ios::binary);
        require(static_cast<bool>(bin), "cannot open " + stem + ".bin for writing");
        static_assert(sizeof(double) == 8);
        for (double v : batch.values) {
            unsigned char bytes[8];
            std::memcpy(bytes, &v, 8);
            if constexpr (std::endian::native == std::endian::big) {
                std::reverse(bytes, bytes + 8);
            }
            bin.write(reinterpret_cast<const char*>(bytes), 8);
        }
    }
    nlohmann::json side = {{"prior_label", batch.prior_label},
                           {"seed", batch.seed},
                           {"grid", batch.grid.times()},
                           {"n_paths", batch.n_paths},
                           {"dimension", batch.dimension}};
    auto schedules = nlohmann::json::array();
    for (const auto& s : batch.schedules) {
        schedules.push_back(nlohmann::json(Prior{"", s, batch.dimension})["schedule"]);
    }
    side["schedules"] = schedules;
    side["schedule_index"] = batch.schedule_index;
    std::ofstream js(stem + ".json");
    require(static_cast<bool>(js), "cannot open " + stem + ".json for writing");
    js << side.dump(2) << '\n';
}

PathBatch read_batch(const std::string& stem)
{
    std::ifstream js(stem + ".json");
    require(static_cast<bool>(js), "cannot open " + stem + ".json");
    const auto side = nlohmann::json::parse(js);
    PathBatch batch;
    batch.prior_label = side.at("prior_label").get<std::string>();
    batch.seed = side.at("seed").get<std::uint64_t>();
    batch.grid = TimeGrid(side.at("grid").get<std::vector<double>>());
    batch.n_paths = side.at("n_paths").get<std::size_t>();
    batch.dimension = side.at("dimension").get<int>();
    for (const auto& rows : side.value("schedules", nlohmann::json::array())) {
        Prior p = nlohmann::json{{"label", ""}, {"schedule", rows}}.get<Prior>();
        batch.schedules.push_back(p.schedule);
    }
    batch.schedule_index =
        side.value("schedule_index", std::vector<std::uint8_t>(batch.n_paths, 0));

    const std::size_t count = batch.n_paths * batch.grid.size() * static_cast<std::size_t>(batch.dimension);
    batch.values.resize(count);
    std::ifstream bin(stem + ".bin", std::ios::binary);
    require(static_cast<bool>(bin), "cannot open " + stem + ".bin");
    for (std::size_t i = 0; i < count; ++i) {
        unsigned char bytes[8];
        bin.read(reinterpret_cast<char*>(bytes), 8);
        require(static_cast<bool>(bin), "path file is shorter than its sidecar declares");
        if constexpr (std::endian::native == std::endian::big) {
            std::reverse(bytes, bytes + 8);
        }
        std::memcpy(&batch.values[i], bytes, 8);
    }
    return batch;
}

std::string format_double(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string csv_field(const std::string& text)
{
    if (text.find_first_of(",\"\n") == std::string::npos) {
        return text;
    }
    std::string out = "\"";
    for (char c : text) {
        out += c;
        if (c == '"') out += '"';
    }
    return out + "\"";
}

void write_estimates_csv(std::ostream& out, const std::vector<EstimateRow>& rows)
{
    out << "prior_label,t,mean,stderr,n\n";
    for (const auto& r : rows) {
        out << csv_field(r.prior_label) << ',' << format_double(r.t) << ',' << format_double(r.estimate.mean) << ','
            << format_double(r.estimate.std_error) << ',' << r.estimate.n << '\n';
    }
}

} // namespace bubblelab
