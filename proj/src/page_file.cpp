#include "rodent/page_file.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace rodent {

page_file::~page_file() {
    if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<page_file> page_file::create(const std::string& path, std::uint32_t page_size) {
    if (page_size < 512) throw io_error("page size too small");
    int fd = ::open(path.c_str(), O_RDWR | O_CREAT | O_TRUNC, 0644);
    if (fd < 0) throw io_error("cannot create " + path + ": " + std::strerror(errno));
    std::unique_ptr<page_file> f(new page_file());
    f->path_ = path;
    f->fd_ = fd;
    f->page_size_ = page_size;
    f->page_count_ = 0;
    f->allocate_pages(1);  // page 0: header
    return f;
}

std::unique_ptr<page_file> page_file::open(const std::string& path, std::uint32_t page_size) {
    int fd = ::open(path.c_str(), O_RDWR);
    if (fd < 0) throw io_error("cannot open " + path + ": " + std::strerror(errno));
    struct stat st{};
    if (::fstat(fd, &st) != 0) {
        ::close(fd);
        throw io_error("cannot stat " + path);
    }
    std::unique_ptr<page_file> f(new page_file());
    f->path_ = path;
    f->fd_ = fd;
    f->page_size_ = page_size;
    f->page_count_ = static_cast<std::uint64_t>(st.st_size) / page_size;
    return f;
}

void page_file::pread_page(std::uint64_t index, std::uint8_t* out) {
    if (index >= page_count_)
        throw io_error("page index out of range: " + std::to_string(index) + " of " +
                       std::to_string(page_count_));
    std::size_t want = page_size_;
    std::uint64_t off = index * static_cast<std::uint64_t>(page_size_);
    std::size_t got = 0;
    while (got < want) {
        ssize_t n = ::pread(fd_, out + got, want - got, static_cast<off_t>(off + got));
        if (n < 0) throw io_error("read failed: " + std::string(std::strerror(errno)));
        if (n == 0) {
            std::memset(out + got, 0, want - got);
            break;
        }
        got += static_cast<std::size_t>(n);
    }
}

byte_buffer page_file::read_page(std::uint64_t index) {
    std::uint64_t start = index * static_cast<std::uint64_t>(page_size_);
    if (start != last_read_end_.load()) seeks_.fetch_add(1);
    byte_buffer out(page_size_);
    pread_page(index, out.data());
    pages_read_.fetch_add(1);
    last_read_end_.store(start + page_size_);
    return out;
}

byte_buffer page_file::read_extent(std::uint64_t byte_offset, std::uint64_t byte_len,
                                   std::set<std::uint64_t>* fetched) {
    if (byte_offset != last_read_end_.load()) seeks_.fetch_add(1);
    byte_buffer out(byte_len);
    if (byte_len > 0) {
        std::uint64_t first = byte_offset / page_size_;
        std::uint64_t last = (byte_offset + byte_len - 1) / page_size_;
        std::vector<std::uint8_t> page(page_size_);
        for (std::uint64_t p = first; p <= last; ++p) {
            if (!fetched || fetched->insert(p).second) pages_read_.fetch_add(1);
            pread_page(p, page.data());
            std::uint64_t page_start = p * static_cast<std::uint64_t>(page_size_);
            std::uint64_t copy_from = std::max(page_start, byte_offset);
            std::uint64_t copy_to = std::min(page_start + page_size_, byte_offset + byte_len);
            std::memcpy(out.data() + (copy_from - byte_offset), page.data() + (copy_from - page_start),
                        copy_to - copy_from);
        }
    }
    last_read_end_.store(byte_offset + byte_len);
    return out;
}

void page_file::write_page(std::uint64_t index, std::span<const std::uint8_t> payload) {
    if (payload.size() > page_size_) throw io_error("payload larger than page");
    if (index >= page_count_) throw io_error("write past end of file");
    if (before_write_hook) before_write_hook(index);
    byte_buffer page(page_size_, 0);
    std::memcpy(page.data(), payload.data(), payload.size());
    std::uint64_t off = index * static_cast<std::uint64_t>(page_size_);
    std::size_t put = 0;
    while (put < page.size()) {
        ssize_t n = ::pwrite(fd_, page.data() + put, page.size() - put,
                             static_cast<off_t>(off + put));
        if (n < 0) throw io_error("write failed: " + std::string(std::strerror(errno)));
        put += static_cast<std::size_t>(n);
    }
    pages_written_.fetch_add(1);
}

std::uint64_t page_file::allocate_pages(std::uint64_t n) {
    std::uint64_t first = page_count_;
    page_count_ += n;
    if (::ftruncate(fd_, static_cast<off_t>(page_count_ * page_size_)) != 0)
        throw io_error("cannot grow file: " + std::string(std::strerror(errno)));
    return first;
}

void page_file::sync() {
    if (::fsync(fd_) != 0) throw io_error("fsync failed");
}

void page_file::reset_counters() {
    pages_read_.store(0);
    pages_written_.store(0);
    seeks_.store(0);
    last_read_end_.store(static_cast<std::uint64_t>(-1));
}

}  // namespace rodent
