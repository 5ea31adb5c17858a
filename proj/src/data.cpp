#include "veil/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "veil/errors.hpp"
#include "veil/image.hpp"

namespace veil {

namespace {

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;

void append_cifar_file(DatasetHandle& h, const std::filesystem::path& file,
                       std::size_t label_bytes, std::size_t label_offset, bool strict) {
    std::ifstream in(file, std::ios::binary);
    if (!in)
        throw DataError("dataset file missing: " + file.string() +
                        " — run `veil fetch-data --dataset " + h.id + "` first");
    in.seekg(0, std::ios::end);
    const std::size_t bytes = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    const std::size_t record = label_bytes + kCifarPixels;
    if (bytes % record != 0) {
        if (strict)
            throw DataError("corrupt dataset file (size not a record multiple): " + file.string());
    }
    const std::size_t n = bytes / record;
    std::vector<std::uint8_t> buf(record);
    for (std::size_t i = 0; i < n; ++i) {
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(record));
        const int label = buf[label_offset];
        if (label < 0 || static_cast<std::size_t>(label) >= h.num_classes) {
            if (strict)
                throw DataError("corrupt record " + std::to_string(i) + " in " + file.string() +
                                ": label out of range");
            continue;
        }
        h.labels.push_back(label);
        h.raw.insert(h.raw.end(), buf.begin() + static_cast<std::ptrdiff_t>(label_bytes),
                     buf.end());
    }
}

DatasetHandle load_cifar(const std::string& id, const std::string& split, std::size_t resolution,
                         const std::filesystem::path& data_root, bool strict) {
    DatasetHandle h;
    h.id = id;
    h.split = split;
    h.native_h = h.native_w = kCifarSide;
    h.resolution = resolution;
    h.stats = imagenet_stats();
    if (id == "cifar10") {
        h.num_classes = 10;
        const auto dir = data_root / "cifar-10-batches-bin";
        if (split == "train") {
            for (int b = 1; b <= 5; ++b)
                append_cifar_file(h, dir / ("data_batch_" + std::to_string(b) + ".bin"), 1, 0,
                                  strict);
        } else {
            append_cifar_file(h, dir / "test_batch.bin", 1, 0, strict);
        }
    } else {
        h.num_classes = 100;
        const auto dir = data_root / "cifar-100-binary";
        // Records carry a coarse label byte then the fine label byte.
        append_cifar_file(h, dir / (split == "train" ? "train.bin" : "test.bin"), 2, 1, strict);
    }
    if (h.labels.empty()) throw DataError("dataset " + id + "/" + split + " is empty");
    return h;
}

}  // namespace

ChannelStats imagenet_stats() { return {{0.485, 0.456, 0.406}, {0.229, 0.224, 0.225}}; }
ChannelStats unit_stats() { return {{0.5, 0.5, 0.5}, {0.5, 0.5, 0.5}}; }

ChannelStats dataset_stats(const std::string& dataset_id) {
    if (dataset_id == "toy-shapes") return unit_stats();
    if (dataset_id == "cifar10" || dataset_id == "cifar100") return imagenet_stats();
    throw DataError("unknown dataset id '" + dataset_id +
                    "' (supported: toy-shapes, cifar10, cifar100)");
}

Tensor DatasetHandle::raw_image(std::size_t i) const {
    const std::size_t px = 3 * native_h * native_w;
    Tensor t({3, native_h, native_w});
    const std::uint8_t* src = raw.data() + i * px;
    for (std::size_t j = 0; j < px; ++j) t[j] = static_cast<real>(src[j]) / 255.0;
    return t;
}

Tensor DatasetHandle::sample(std::size_t i) const {
    Tensor img = raw_image(i);
    if (native_h != resolution || native_w != resolution)
        img = resize_bilinear(img, resolution, resolution);
    return normalize_pixels(img, stats);
}

DatasetHandle load_dataset(const std::string& dataset_id, const std::string& split,
                           std::size_t resolution, const std::filesystem::path& data_root,
                           bool strict) {
    if (split != "train" && split != "test")
        throw DataError("unknown split '" + split + "' (expected train or test)");
    if (resolution == 0) throw DataError("resolution must be positive");
    if (dataset_id == "toy-shapes") return generate_toy_shapes(split, resolution);
    if (dataset_id == "cifar10" || dataset_id == "cifar100")
        return load_cifar(dataset_id, split, resolution, data_root, strict);
    throw DataError("unknown dataset id '" + dataset_id +
                    "' (supported: toy-shapes, cifar10, cifar100)");
}

DatasetHandle make_memory_dataset(std::string id, const Tensor& images, std::vector<int> labels,
                                  std::size_t num_classes, std::size_t resolution,
                                  ChannelStats stats) {
    if (images.ndim() != 4 || images.dim(1) != 3)
        throw ContractError("memory dataset expects [N,3,H,W] images");
    if (images.dim(0) != labels.size())
        throw ContractError("memory dataset image/label count mismatch");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
            throw ContractError("memory dataset label " + std::to_string(y) +
                                " outside [0," + std::to_string(num_classes) + ")");
    DatasetHandle h;
    h.id = std::move(id);
    h.split = "train";
    h.num_classes = num_classes;
    h.native_h = images.dim(2);
    h.native_w = images.dim(3);
    h.resolution = resolution;
    h.stats = stats;
    h.labels = std::move(labels);
    h.raw.resize(images.numel());
    for (std::size_t i = 0; i < images.numel(); ++i) {
        const real v = images[i];
        if (v < 0.0 || v > 1.0)
            throw ContractError("memory dataset pixels must lie in [0,1]");
        h.raw[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return h;
}

Tensor normalize_pixels(const Tensor& raw01, const ChannelStats& stats) {
    const bool batched = raw01.ndim() == 4;
    if (!batched && raw01.ndim() != 3)
        throw ContractError("normalize_pixels expects [3,H,W] or [B,3,H,W]");
    const std::size_t ch_dim = batched ? raw01.dim(1) : raw01.dim(0);
    if (ch_dim != 3) throw ContractError("normalize_pixels expects 3 channels");
    for (std::size_t i = 0; i < raw01.numel(); ++i)
        if (raw01[i] < 0.0 || raw01[i] > 1.0)
            throw DataError("normalize_pixels input outside [0,1]; tensor is not in pixel "
                            "space (already preprocessed?)");
    Tensor out = raw01;
    const std::size_t batch = batched ? raw01.dim(0) : 1;
    const std::size_t hw = batched ? raw01.dim(2) * raw01.dim(3) : raw01.dim(1) * raw01.dim(2);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < 3; ++c) {
            real* p = out.data() + (b * 3 + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) p[i] = (p[i] - stats.mean[c]) / stats.std[c];
        }
    return out;
}

Tensor denormalize_pixels(const Tensor& normalized, const ChannelStats& stats) {
    const bool batched = normalized.ndim() == 4;
    if (!batched && normalized.ndim() != 3)
        throw ContractError("denormalize_pixels expects [3,H,W] or [B,3,H,W]");
    Tensor out = normalized;
    const std::size_t batch = batched ? normalized.dim(0) : 1;
    const std::size_t hw =
        batched ? normalized.dim(2) * normalized.dim(3) : normalized.dim(1) * normalized.dim(2);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < 3; ++c) {
            real* p = out.data() + (b * 3 + c) * hw;
            for (std::size_t i = 0; i < hw; ++i)
                p[i] = std::clamp(p[i] * stats.std[c] + stats.mean[c], 0.0, 1.0);
        }
    return out;
}

Tensor assemble_batch(const DatasetHandle& h, const std::vector<std::size_t>& indices) {
    Tensor X({indices.size(), 3, h.resolution, h.resolution});
    const std::size_t px = 3 * h.resolution * h.resolution;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        Tensor s = h.sample(indices[i]);
        std::copy(s.data(), s.data() + px, X.data() + i * px);
    }
    return X;
}

std::vector<int> gather_labels(const DatasetHandle& h, const std::vector<std::size_t>& indices) {
    std::vector<int> y(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) y[i] = h.labels[indices[i]];
    return y;
}

BatchStream::BatchStream(const DatasetHandle& h, std::size_t batch_size, std::uint64_t seed,
                         std::size_t epoch)
    : handle_(h), batch_size_(batch_size) {
    if (batch_size == 0 || batch_size > h.size())
        throw ContractError("batch_size must lie in [1, dataset size]");
    RngStream rs(derive_seed(seed, "shuffle", epoch));
    order_ = rs.permutation(h.size());
}

BatchStream::BatchStream(const DatasetHandle& h, std::size_t batch_size)
    : handle_(h), batch_size_(batch_size) {
    if (batch_size == 0) throw ContractError("batch_size must be positive");
    order_.resize(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) order_[i] = i;
}

bool BatchStream::next(Tensor& X, std::vector<int>& Y) {
    if (cursor_ >= order_.size()) return false;
    const std::size_t n = std::min(batch_size_, order_.size() - cursor_);
    std::vector<std::size_t> idx(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + n));
    cursor_ += n;
    X = assemble_batch(handle_, idx);
    Y = gather_labels(handle_, idx);
    return true;
}

std::size_t BatchStream::num_batches() const {
    return (order_.size() + batch_size_ - 1) / batch_size_;
}

}  // namespace veil
