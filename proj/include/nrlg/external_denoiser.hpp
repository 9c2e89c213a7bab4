#pragma once

#include <sys/types.h>
#include <sys/wait.h>
#include <signal.h>
#include <unistd.h>

#include <cstring>
#include <string>
#include <vector>

#include "nrlg/denoiser.hpp"
#include "nrlg/errors.hpp"
#include "nrlg/schedule.hpp"
#include "nrlg/tensor.hpp"

namespace nrlg {

// Wire protocol with an external noise-predictor process, spoken over the
// child's stdin/stdout as little-endian length-prefixed frames
// (u32 length, then body):
//
//   HANDSHAKE req :  "NRLG" u16 version=1 u32 T f64 beta_start f64 beta_end
//                    u8 ndim u32 dims[ndim]
//   HANDSHAKE resp:  "NRLG" u16 version u8 status (0 = ok)
//   PREDICT req   :  u8 2  u32 t  f32 payload[prod(dims)]
//   PREDICT resp  :  u8 3  f32 payload[prod(dims)]
//
// Any other leading byte is a protocol error and the client terminates
// the child. One request is in flight at a time.
namespace wire {

inline constexpr std::uint16_t kProtocolVersion = 1;
inline constexpr std::uint8_t kMsgPredictReq = 2;
inline constexpr std::uint8_t kMsgPredictResp = 3;

using Bytes = std::vector<unsigned char>;

inline void put_u16(Bytes& b, std::uint16_t v) {
  b.push_back(static_cast<unsigned char>(v & 0xff));
  b.push_back(static_cast<unsigned char>(v >> 8));
}
inline void put_u32(Bytes& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
inline void put_f64(Bytes& b, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<unsigned char>(bits >> (8 * i)));
}
inline void put_f32(Bytes& b, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(b, bits);
}

inline std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline std::uint32_t get_u32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | p[i];
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}
inline float get_f32(const unsigned char* p) {
  std::uint32_t bits = get_u32(p);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline bool read_exact(int fd, unsigned char* buf, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    ssize_t r = ::read(fd, buf + got, n - got);
    if (r <= 0) return false;
    got += static_cast<std::size_t>(r);
  }
  return true;
}

inline bool write_all(int fd, const unsigned char* buf, std::size_t n) {
  std::size_t put = 0;
  while (put < n) {
    ssize_t w = ::write(fd, buf + put, n - put);
    if (w <= 0) return false;
    put += static_cast<std::size_t>(w);
  }
  return true;
}

inline bool write_frame(int fd, const Bytes& body) {
  Bytes hdr;
  put_u32(hdr, static_cast<std::uint32_t>(body.size()));
  return write_all(fd, hdr.data(), hdr.size()) &&
         write_all(fd, body.data(), body.size());
}

inline bool read_frame(int fd, Bytes& body, std::size_t max_len = (1u << 30)) {
  unsigned char hdr[4];
  if (!read_exact(fd, hdr, 4)) return false;
  std::uint32_t len = get_u32(hdr);
  if (len > max_len) return false;
  body.resize(len);
  return len == 0 || read_exact(fd, body.data(), len);
}

}  // namespace wire

// Child-process transport descriptor plus handshake parameters.
struct ExternalDenoiserEndpoint {
  std::string command_line;  // whitespace-split argv
  int T = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<std::size_t> dims;
};

// Client side of the protocol. Spawns the peer on construction, performs
// the handshake, and terminates the child on destruction or on any
// protocol violation. Not shareable across concurrent runs.
class ExternalDenoiser final : public DenoiserInterface {
 public:
  explicit ExternalDenoiser(ExternalDenoiserEndpoint endpoint)
      : endpoint_(std::move(endpoint)) {
    spawn();
    try {
      handshake();
    } catch (...) {
      terminate();
      throw;
    }
  }

  ~ExternalDenoiser() override { terminate(); }

  ExternalDenoiser(const ExternalDenoiser&) = delete;
  ExternalDenoiser& operator=(const ExternalDenoiser&) = delete;

  Tensor predict_noise(const Tensor& x_t, int t) override {
    if (x_t.dims() != endpoint_.dims)
      throw shape_error("external denoiser: input does not match handshake dims");
    wire::Bytes req;
    req.push_back(wire::kMsgPredictReq);
    wire::put_u32(req, static_cast<std::uint32_t>(t));
    for (std::size_t i = 0; i < x_t.size(); ++i)
      wire::put_f32(req, static_cast<float>(x_t[i]));
    if (!wire::write_frame(child_stdin_, req))
      fail<protocol_error>("external denoiser: write failed");

    wire::Bytes resp;
    if (!wire::read_frame(child_stdout_, resp) || resp.empty())
      fail<protocol_error>("external denoiser: no response");
    if (resp[0] != wire::kMsgPredictResp)
      fail<protocol_error>("external denoiser: unexpected message type " +
                           std::to_string(resp[0]));
    const std::size_t n = x_t.size();
    if (resp.size() != 1 + 4 * n)
      fail<shape_error>("external denoiser: peer returned wrong shape (" +
                        std::to_string((resp.size() - 1) / 4) + " values, expected " +
                        std::to_string(n) + ")");
    Tensor out(x_t.dims());
    for (std::size_t i = 0; i < n; ++i)
      out[i] = wire::get_f32(resp.data() + 1 + 4 * i);
    return out;
  }

 private:
  template <typename E>
  [[noreturn]] void fail(const std::string& msg) {
    terminate();
    throw E(msg);
  }

  void spawn() {
    std::vector<std::string> args;
    {
      std::string cur;
      for (char ch : endpoint_.command_line) {
        if (ch == ' ' || ch == '\t') {
          if (!cur.empty()) args.push_back(std::move(cur)), cur.clear();
        } else {
          cur.push_back(ch);
        }
      }
      if (!cur.empty()) args.push_back(std::move(cur));
    }
    if (args.empty()) throw domain_error("external denoiser: empty command line");

    int to_child[2], from_child[2];
    if (::pipe(to_child) != 0 || ::pipe(from_child) != 0)
      throw protocol_error("external denoiser: pipe() failed");
    pid_ = ::fork();
    if (pid_ < 0) throw protocol_error("external denoiser: fork() failed");
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      std::vector<char*> argv;
      for (auto& a : args) argv.push_back(a.data());
      argv.push_back(nullptr);
      ::execvp(argv[0], argv.data());
      _exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    child_stdin_ = to_child[1];
    child_stdout_ = from_child[0];
  }

  void handshake() {
    wire::Bytes req;
    req.insert(req.end(), {'N', 'R', 'L', 'G'});
    wire::put_u16(req, wire::kProtocolVersion);
    wire::put_u32(req, static_cast<std::uint32_t>(endpoint_.T));
    wire::put_f64(req, endpoint_.beta_start);
    wire::put_f64(req, endpoint_.beta_end);
    req.push_back(static_cast<unsigned char>(endpoint_.dims.size()));
    for (std::size_t d : endpoint_.dims)
      wire::put_u32(req, static_cast<std::uint32_t>(d));
    if (!wire::write_frame(child_stdin_, req))
      throw protocol_error("external denoiser: handshake write failed");

    wire::Bytes resp;
    if (!wire::read_frame(child_stdout_, resp) || resp.size() != 7)
      throw protocol_error("external denoiser: bad handshake response");
    if (std::memcmp(resp.data(), "NRLG", 4) != 0)
      throw protocol_error("external denoiser: bad handshake magic");
    std::uint16_t version = wire::get_u16(resp.data() + 4);
    if (version != wire::kProtocolVersion)
      throw protocol_error("external denoiser: protocol version mismatch (peer " +
                           std::to_string(version) + ")");
    if (resp[6] != 0)
      throw protocol_error("external denoiser: peer refused handshake (status " +
                           std::to_string(resp[6]) + ")");
  }

  void terminate() {
    if (child_stdin_ >= 0) ::close(child_stdin_);
    if (child_stdout_ >= 0) ::close(child_stdout_);
    child_stdin_ = child_stdout_ = -1;
    if (pid_ > 0) {
      ::kill(pid_, SIGTERM);
      int status = 0;
      ::waitpid(pid_, &status, 0);
      pid_ = -1;
    }
  }

  ExternalDenoiserEndpoint endpoint_;
  pid_t pid_ = -1;
  int child_stdin_ = -1;
  int child_stdout_ = -1;
};

}  // namespace nrlg
