#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "rodent/codec.hpp"

namespace rodent {

class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& m) : std::runtime_error(m) {}
};

/// Fixed-size page storage with IO accounting.
///
/// Reads are issued as byte extents. A read seeks exactly when its start is
/// not contiguous with the previous read's end; reading pages i, i+1, ... in
/// sequence therefore costs one seek. A scan may pass its fetched-page set so
/// that pages shared between nearby extents are fetched once while each
/// discontiguous extent still registers a seek.
class page_file {
public:
    page_file(const page_file&) = delete;
    page_file& operator=(const page_file&) = delete;
    ~page_file();

    static std::unique_ptr<page_file> create(const std::string& path, std::uint32_t page_size);
    static std::unique_ptr<page_file> open(const std::string& path, std::uint32_t page_size);

    const std::string& path() const { return path_; }
    std::uint32_t page_size() const { return page_size_; }
    std::uint64_t page_count() const { return page_count_; }

    /// Reads one full page; always counts the page read.
    byte_buffer read_page(std::uint64_t index);

    /// Reads an arbitrary byte extent. Pages already in `fetched` are not
    /// re-read (and not re-counted); newly touched pages are added to it.
    byte_buffer read_extent(std::uint64_t byte_offset, std::uint64_t byte_len,
                            std::set<std::uint64_t>* fetched = nullptr);

    void write_page(std::uint64_t index, std::span<const std::uint8_t> payload);

    /// Extends the file by n zeroed pages; returns the first new index.
    std::uint64_t allocate_pages(std::uint64_t n);

    void sync();

    std::uint64_t pages_read() const { return pages_read_.load(); }
    std::uint64_t pages_written() const { return pages_written_.load(); }
    std::uint64_t seeks() const { return seeks_.load(); }
    void reset_counters();

    /// Test hook: invoked with the page index before each physical write.
    std::function<void(std::uint64_t)> before_write_hook;

private:
    page_file() = default;
    void pread_page(std::uint64_t index, std::uint8_t* out);

    std::string path_;
    int fd_ = -1;
    std::uint32_t page_size_ = 0;
    std::uint64_t page_count_ = 0;

    std::atomic<std::uint64_t> pages_read_{0};
    std::atomic<std::uint64_t> pages_written_{0};
    std::atomic<std::uint64_t> seeks_{0};
    std::atomic<std::uint64_t> last_read_end_{static_cast<std::uint64_t>(-1)};
};

}  // namespace rodent
