#pragma once

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "snne/errors.hpp"
#include "snne/image_io.hpp"
#include "snne/rng.hpp"
#include "snne/tensor.hpp"

// Paired-image ingestion: manifests or raw/ref directory pairs, bilinear
// resizing to the training resolution, deterministic splits and batching.

namespace snne {

struct ManifestEntry {
  std::string raw_path;
  std::string ref_path;
};

// Tab-separated "raw<TAB>reference" lines; blank lines and #comments skipped.
inline std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open manifest: " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw IngestError("manifest " + path + ":" + std::to_string(lineno) +
                        ": expected raw<TAB>reference");
    }
    entries.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return entries;
}

// Directory convention: raw/ and ref/ with matching filenames. Sorted for
// deterministic ordering.
inline std::vector<ManifestEntry> scan_pair_dirs(const std::string& raw_dir,
                                                 const std::string& ref_dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(raw_dir)) {
    throw IngestError("not a directory: " + raw_dir);
  }
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(raw_dir)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".PNG" ||
        ext == ".JPG" || ext == ".JPEG") {
      names.push_back(e.path().filename().string());
    }
  }
  std::sort(names.begin(), names.end());
  std::vector<ManifestEntry> entries;
  for (const auto& name : names) {
    const fs::path ref = fs::path(ref_dir) / name;
    if (!fs::exists(ref)) {
      throw IngestError("missing reference image: " + ref.string());
    }
    entries.push_back({(fs::path(raw_dir) / name).string(), ref.string()});
  }
  return entries;
}

// Lists decodable images of one directory, sorted.
inline std::vector<std::string> scan_image_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IngestError("not a directory: " + dir);
  std::vector<std::string> paths;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".PNG" ||
        ext == ".JPG" || ext == ".JPEG") {
      paths.push_back(e.path().string());
    }
  }
  std::sort(paths.begin(), paths.end());
  return paths;
}

// Bilinear resize with half-pixel centers; identity when dims already match
// (so an unresized load is exactly source/255). Constant images stay
// constant.
inline Tensor4f resize_bilinear(const Tensor4f& src, int height, int width) {
  if (height < 1 || width < 1) {
    throw PreconditionError("resize_bilinear: target dims must be >= 1");
  }
  if (src.height == height && src.width == width) return src;
  Tensor4f out(src.batch, src.channels, height, width);
  const double sy = static_cast<double>(src.height) / height;
  const double sx = static_cast<double>(src.width) / width;
  for (int n = 0; n < src.batch; ++n) {
    for (int c = 0; c < src.channels; ++c) {
      const float* in_plane = src.plane(n, c);
      float* out_plane = out.plane(n, c);
      for (int y = 0; y < height; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(src.height - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < width; ++x) {
          double fx = (x + 0.5) * sx - 0.5;
          fx = std::clamp(fx, 0.0, static_cast<double>(src.width - 1));
          const int x0 = static_cast<int>(fx);
          const int x1 = std::min(x0 + 1, src.width - 1);
          const double wx = fx - x0;
          const double top = in_plane[y0 * src.width + x0] * (1.0 - wx) +
                             in_plane[y0 * src.width + x1] * wx;
          const double bot = in_plane[y1 * src.width + x0] * (1.0 - wx) +
                             in_plane[y1 * src.width + x1] * wx;
          out_plane[y * width + x] =
              static_cast<float>(top * (1.0 - wy) + bot * wy);
        }
      }
    }
  }
  return out;
}

struct ImagePair {
  Tensor4f raw;
  Tensor4f reference;
  std::string raw_path;
  std::string ref_path;
};

inline ImagePair load_pair(const std::string& raw_path,
                           const std::string& ref_path, int height,
                           int width) {
  ImagePair pair;
  pair.raw_path = raw_path;
  pair.ref_path = ref_path;
  pair.raw = resize_bilinear(image_to_tensor(read_image(raw_path)), height,
                             width);
  pair.reference = resize_bilinear(image_to_tensor(read_image(ref_path)),
                                   height, width);
  return pair;
}

// Deterministic shuffle-then-partition split; the two sides are disjoint and
// cover the manifest.
inline std::pair<std::vector<ManifestEntry>, std::vector<ManifestEntry>> split(
    const std::vector<ManifestEntry>& entries, std::uint64_t seed,
    double train_fraction) {
  if (entries.empty()) {
    throw ConfigError("split: empty manifest");
  }
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) {
    throw ConfigError("split: train fraction must lie in [0,1]");
  }
  std::vector<std::size_t> order(entries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  const std::size_t n_train = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(entries.size())));
  std::pair<std::vector<ManifestEntry>, std::vector<ManifestEntry>> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? out.first : out.second).push_back(entries[order[i]]);
  }
  return out;
}

// Per-epoch deterministic batch order; the final partial batch is emitted.
inline std::vector<std::vector<std::size_t>> batch_plan(std::size_t count,
                                                        int batch_size,
                                                        Rng epoch_rng) {
  if (batch_size < 1) {
    throw ConfigError("batch_plan: batch_size must be >= 1");
  }
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  epoch_rng.shuffle(order);
  std::vector<std::vector<std::size_t>> plan;
  for (std::size_t at = 0; at < count;
       at += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(count, at + static_cast<std::size_t>(batch_size));
    plan.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                      order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return plan;
}

// Stacks single-sample tensors along the batch dimension.
inline Tensor4f stack_batch(const std::vector<const Tensor4f*>& samples) {
  if (samples.empty()) throw PreconditionError("stack_batch: empty batch");
  const Tensor4f& first = *samples.front();
  Tensor4f out(static_cast<int>(samples.size()), first.channels, first.height,
               first.width);
  const std::size_t sample_size = first.size();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    require_same_shape(first, *samples[i], "stack_batch");
    std::copy(samples[i]->data.begin(), samples[i]->data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(i * sample_size));
  }
  return out;
}

// Bounded producer/consumer queue so decoding can overlap compute without
// outrunning the consumer.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(T item) {
    std::unique_lock<std::mutex> lock(mutex_);
    not_full_.wait(lock, [&] { return queue_.size() < capacity_ || closed_; });
    if (closed_) return;
    queue_.push(std::move(item));
    not_empty_.notify_one();
  }

  std::optional<T> pop() {
    std::unique_lock<std::mutex> lock(mutex_);
    not_empty_.wait(lock, [&] { return !queue_.empty() || closed_; });
    if (queue_.empty()) return std::nullopt;
    T item = std::move(queue_.front());
    queue_.pop();
    not_full_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard<std::mutex> lock(mutex_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::mutex mutex_;
  std::condition_variable not_empty_, not_full_;
  std::queue<T> queue_;
  bool closed_ = false;
};

}  // namespace snne
