// Noise-prediction peer speaking the external-denoiser wire protocol on
// stdin/stdout. Serves the analytic Gaussian-prior predictor; the
// --misbehave flag makes it violate the protocol on purpose so client
// error paths can be exercised.
//
//   analytic-peer [--prior-mean M] [--prior-var V] [--zero]
//                 [--misbehave bad-magic|bad-version|refuse|wrong-shape|bad-msg]
//
// --zero turns it into the echo-zero fixture (always predicts zero noise).

#include <unistd.h>

#include <cstring>
#include <optional>
#include <string>

#include "nrlg/denoiser.hpp"
#include "nrlg/external_denoiser.hpp"
#include "nrlg/schedule.hpp"

using namespace nrlg;

namespace {

struct Options {
  double prior_mean = 0.5;
  double prior_var = 1.0;
  bool zero = false;
  std::string misbehave;
};

Options parse_args(int argc, char** argv) {
  Options o;
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    auto next = [&]() -> std::string {
      if (i + 1 >= argc) {
        std::fprintf(stderr, "analytic-peer: missing value for %s\n", a.c_str());
        std::exit(2);
      }
      return argv[++i];
    };
    if (a == "--prior-mean")
      o.prior_mean = std::stod(next());
    else if (a == "--prior-var")
      o.prior_var = std::stod(next());
    else if (a == "--zero")
      o.zero = true;
    else if (a == "--misbehave")
      o.misbehave = next();
    else {
      std::fprintf(stderr, "analytic-peer: unknown flag %s\n", a.c_str());
      std::exit(2);
    }
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  Options opt = parse_args(argc, argv);

  wire::Bytes req;
  if (!wire::read_frame(STDIN_FILENO, req) || req.size() < 27 ||
      std::memcmp(req.data(), "NRLG", 4) != 0) {
    std::fprintf(stderr, "analytic-peer: bad handshake request\n");
    return 1;
  }
  std::uint16_t version = wire::get_u16(req.data() + 4);
  std::uint32_t T = wire::get_u32(req.data() + 6);
  double beta_start = wire::get_f64(req.data() + 10);
  double beta_end = wire::get_f64(req.data() + 18);
  std::size_t ndim = req[26];
  if (req.size() != 27 + 4 * ndim) {
    std::fprintf(stderr, "analytic-peer: bad handshake dims\n");
    return 1;
  }
  std::vector<std::size_t> dims(ndim);
  std::size_t n = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    dims[i] = wire::get_u32(req.data() + 27 + 4 * i);
    n *= dims[i];
  }

  wire::Bytes resp;
  if (opt.misbehave == "bad-magic")
    resp.insert(resp.end(), {'X', 'X', 'X', 'X'});
  else
    resp.insert(resp.end(), {'N', 'R', 'L', 'G'});
  wire::put_u16(resp, opt.misbehave == "bad-version"
                          ? static_cast<std::uint16_t>(99)
                          : version);
  resp.push_back(opt.misbehave == "refuse" ? 1 : 0);
  if (!wire::write_frame(STDOUT_FILENO, resp)) return 1;

  DiffusionSchedule schedule = linear_schedule(static_cast<int>(T), beta_start, beta_end);
  GaussianPrior prior = GaussianPrior::constant(dims, opt.prior_mean, opt.prior_var);

  wire::Bytes frame;
  while (wire::read_frame(STDIN_FILENO, frame)) {
    if (frame.empty() || frame[0] != wire::kMsgPredictReq || frame.size() != 5 + 4 * n) {
      std::fprintf(stderr, "analytic-peer: bad predict request\n");
      return 1;
    }
    int t = static_cast<int>(wire::get_u32(frame.data() + 1));
    Tensor x(dims);
    for (std::size_t i = 0; i < n; ++i)
      x[i] = wire::get_f32(frame.data() + 5 + 4 * i);
    Tensor eps = opt.zero ? Tensor(dims)
                          : analytic_predict_noise(prior, schedule, x, t);

    wire::Bytes out;
    out.push_back(opt.misbehave == "bad-msg" ? static_cast<unsigned char>(9)
                                             : wire::kMsgPredictResp);
    std::size_t count = opt.misbehave == "wrong-shape" ? n / 2 : n;
    for (std::size_t i = 0; i < count; ++i)
      wire::put_f32(out, static_cast<float>(eps[i]));
    if (!wire::write_frame(STDOUT_FILENO, out)) return 1;
  }
  return 0;
}
