#include "krigscd/external_denoiser.hpp"

#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <bit>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <limits>

namespace krigscd {

namespace {

static_assert(std::endian::native == std::endian::little, "wire protocol codec assumes a little-endian host");

using Clock = std::chrono::steady_clock;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof v);
}

void ignore_sigpipe() {
  struct sigaction current {};
  if (sigaction(SIGPIPE, nullptr, &current) == 0 && current.sa_handler == SIG_DFL) {
    struct sigaction ignore {};
    ignore.sa_handler = SIG_IGN;
    sigaction(SIGPIPE, &ignore, nullptr);
  }
}

int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::ceil<std::chrono::milliseconds>(deadline - Clock::now()).count();
  return left > 0 ? static_cast<int>(std::min<long long>(left, std::numeric_limits<int>::max())) : 0;
}

std::uint32_t checked_u32(Eigen::Index v, const char* what) {
  if (v < 0 || v > static_cast<Eigen::Index>(std::numeric_limits<std::uint32_t>::max()))
    throw ProtocolError(std::string(what) + " does not fit the wire format");
  return static_cast<std::uint32_t>(v);
}

Grid floats_to_grid(const std::uint8_t* data, Eigen::Index rows, Eigen::Index cols) {
  Grid g(rows, cols);
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    float f;
    std::memcpy(&f, data + i * sizeof(float), sizeof f);
    g.data()[i] = f;
  }
  return g;
}

}  // namespace

std::vector<std::uint8_t> encode_denoiser_request(const Grid& x_t, std::uint32_t t) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + static_cast<std::size_t>(x_t.size()) * sizeof(float));
  put_u32(out, kDenoiserMagic);
  put_u32(out, t);
  put_u32(out, checked_u32(x_t.rows(), "height"));
  put_u32(out, checked_u32(x_t.cols(), "width"));
  for (Eigen::Index i = 0; i < x_t.size(); ++i) {
    const auto f = static_cast<float>(x_t.data()[i]);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&f);
    out.insert(out.end(), p, p + sizeof f);
  }
  return out;
}

DenoiserOutput decode_denoiser_response(const std::vector<std::uint8_t>& bytes, Eigen::Index rows,
                                        Eigen::Index cols) {
  const auto plane = static_cast<std::size_t>(rows * cols) * sizeof(float);
  if (bytes.empty()) throw ProtocolError("empty response");
  const bool has_v = bytes[0] & 1u;
  const std::size_t expected = 1 + plane * (has_v ? 2 : 1);
  if (bytes.size() != expected)
    throw ProtocolError("response length " + std::to_string(bytes.size()) + ", expected " + std::to_string(expected));
  DenoiserOutput out;
  out.eps = floats_to_grid(bytes.data() + 1, rows, cols);
  if (!out.eps.allFinite()) throw ProtocolError("non-finite noise prediction");
  if (has_v) {
    Grid v = floats_to_grid(bytes.data() + 1 + plane, rows, cols);
    if (v.hasNaN()) throw ProtocolError("NaN variance weights");
    out.v = v.cwiseMax(0.0).cwiseMin(1.0);
  }
  return out;
}

ExternalDenoiser::ExternalDenoiser(ExternalDenoiserConfig config) : config_(std::move(config)) {
  if (config_.command.empty()) throw ConfigError("denoiser", "external denoiser command is empty");
  if (config_.timeout.count() <= 0) throw ConfigError("denoiser", "denoiser timeout must be positive");
  ignore_sigpipe();

  int in_pipe[2], out_pipe[2];
  if (pipe(in_pipe) != 0) throw DenoiserError(std::string("pipe: ") + std::strerror(errno));
  if (pipe(out_pipe) != 0) {
    close(in_pipe[0]);
    close(in_pipe[1]);
    throw DenoiserError(std::string("pipe: ") + std::strerror(errno));
  }
  const pid_t pid = fork();
  if (pid < 0) {
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) close(fd);
    throw DenoiserError(std::string("fork: ") + std::strerror(errno));
  }
  if (pid == 0) {
    setpgid(0, 0);
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) close(fd);
    execl("/bin/sh", "sh", "-c", config_.command.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  setpgid(pid, pid);
  close(in_pipe[0]);
  close(out_pipe[1]);
  pid_ = pid;
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
}

ExternalDenoiser::~ExternalDenoiser() { shutdown(); }

void ExternalDenoiser::shutdown() {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  to_child_ = from_child_ = -1;
  if (pid_ > 0) {
    int status = 0;
    const auto deadline = Clock::now() + std::chrono::milliseconds(500);
    while (waitpid(pid_, &status, WNOHANG) == 0) {
      if (Clock::now() > deadline) {
        kill(-pid_, SIGKILL);
        waitpid(pid_, &status, 0);
        break;
      }
      usleep(1000);
    }
    pid_ = -1;
  }
}

void ExternalDenoiser::write_all(const void* data, std::size_t size) {
  const auto deadline = Clock::now() + config_.timeout;
  const auto* p = static_cast<const std::uint8_t*>(data);
  while (size > 0) {
    pollfd pfd{to_child_, POLLOUT, 0};
    const int ready = poll(&pfd, 1, remaining_ms(deadline));
    if (ready == 0) throw DenoiserError("timed out writing request");
    if (ready < 0) {
      if (errno == EINTR) continue;
      throw DenoiserError(std::string("poll: ") + std::strerror(errno));
    }
    const ssize_t n = write(to_child_, p, size);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw DenoiserError(std::string("child closed its input: ") + std::strerror(errno));
    }
    p += n;
    size -= static_cast<std::size_t>(n);
  }
}

void ExternalDenoiser::read_all(void* data, std::size_t size) {
  const auto deadline = Clock::now() + config_.timeout;
  auto* p = static_cast<std::uint8_t*>(data);
  while (size > 0) {
    pollfd pfd{from_child_, POLLIN, 0};
    const int ready = poll(&pfd, 1, remaining_ms(deadline));
    if (ready == 0) throw DenoiserError("timed out waiting for response");
    if (ready < 0) {
      if (errno == EINTR) continue;
      throw DenoiserError(std::string("poll: ") + std::strerror(errno));
    }
    const ssize_t n = read(from_child_, p, size);
    if (n == 0) throw ProtocolError("child closed its output mid-response");
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw DenoiserError(std::string("read: ") + std::strerror(errno));
    }
    p += n;
    size -= static_cast<std::size_t>(n);
  }
}

DenoiserOutput ExternalDenoiser::predict(const Grid& x_t, int t, const NoiseSchedule& schedule) {
  if (pid_ < 0) throw DenoiserError("denoiser process is not running");
  const auto start = Clock::now();
  const auto parent_t = static_cast<std::uint32_t>(schedule.timesteps[static_cast<std::size_t>(t - 1)]);
  const std::vector<std::uint8_t> request = encode_denoiser_request(x_t, parent_t);
  const auto plane = static_cast<std::size_t>(x_t.size()) * sizeof(float);
  try {
    write_all(request.data(), request.size());
    std::vector<std::uint8_t> response(1 + plane);
    read_all(response.data(), response.size());
    if (response[0] & 1u) {
      response.resize(1 + 2 * plane);
      read_all(response.data() + 1 + plane, plane);
    }
    pollfd pfd{from_child_, POLLIN, 0};
    if (poll(&pfd, 1, 0) > 0 && (pfd.revents & POLLIN)) {
      std::uint8_t extra;
      if (read(from_child_, &extra, 1) > 0) throw ProtocolError("response longer than expected");
    }
    DenoiserOutput out = decode_denoiser_response(response, x_t.rows(), x_t.cols());
    latencies_.push_back(std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - start));
    return out;
  } catch (const DenoiserError&) {
    shutdown();
    throw;
  }
}

}  // namespace krigscd
