#pragma once

#include <array>
#include <filesystem>
#include <string>

namespace bnrl::data {

struct MnistPaths {
    std::filesystem::path train_images;
    std::filesystem::path train_labels;
    std::filesystem::path test_images;
    std::filesystem::path test_labels;
};

/// Ensures the four uncompressed IDX files exist under data_dir with the
/// pinned SHA-256 checksums (see docs/mnist_files.md). Resolution order:
/// verified cached file -> cached .gz to decompress -> HTTP download from
/// base_url. A cached file failing its checksum is quarantined (renamed to
/// *.corrupt) and IntegrityError is thrown. Offline with no cache throws
/// FetchError. Idempotent on cache hit.
MnistPaths fetch_mnist(const std::filesystem::path& data_dir,
                       const std::string& base_url =
                           "http://ossci-datasets.s3.amazonaws.com/mnist");

/// Lowercase hex SHA-256 of a file's contents.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace bnrl::data
