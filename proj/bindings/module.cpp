// Python bindings for the main pipeline operations. Arrays cross the
// boundary as numpy float64; shapes follow the C++ conventions
// (spectra are [bins, frames], filterbanks [n_mels, bins]).

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "lungsc/augment.hpp"
#include "lungsc/backbone.hpp"
#include "lungsc/cotuning.hpp"
#include "lungsc/error.hpp"
#include "lungsc/experiment.hpp"
#include "lungsc/features.hpp"
#include "lungsc/ingest.hpp"
#include "lungsc/metrics.hpp"
#include "lungsc/speccorr.hpp"
#include "lungsc/stochnorm.hpp"

namespace py = pybind11;
using namespace lungsc;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vector(const Array& a) {
  return std::vector<double>(a.data(), a.data() + a.size());
}

Array matrix_to_array(const std::vector<double>& data, py::ssize_t rows, py::ssize_t cols) {
  Array out({rows, cols});
  std::copy(data.begin(), data.end(), out.mutable_data());
  return out;
}

Stft stft_from_array(const Array& a) {
  if (a.ndim() != 2) throw ShapeMismatch("expected a 2-D [bins, frames] array");
  Stft s;
  s.bins = static_cast<int>(a.shape(0));
  s.frames = static_cast<int>(a.shape(1));
  s.mag = to_vector(a);
  return s;
}

Tensor tensor_from_array(const Array& a) {
  Tensor t;
  t.shape.assign(a.shape(), a.shape() + a.ndim());
  t.data = to_vector(a);
  return t;
}

Array tensor_to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  Array out(shape);
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

SpectralConfig spectral_config_from_kwargs(int nfft, int hop, int n_mels, double fmin,
                                           double fmax, int sample_rate, double warp,
                                           double warp_fhi) {
  SpectralConfig cfg;
  cfg.nfft = nfft;
  cfg.hop = hop;
  cfg.n_mels = n_mels;
  cfg.fmin_hz = fmin;
  cfg.fmax_hz = fmax;
  cfg.sample_rate_hz = sample_rate;
  cfg.warp_factor = warp;
  cfg.warp_fhi_hz = warp_fhi;
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "lung sound classification pipeline (native core)";

  py::register_exception<Error>(m, "LungscError");

  // ---- ingest
  py::class_<RecordingMeta>(m, "RecordingMeta")
      .def_readonly("patient_id", &RecordingMeta::patient_id)
      .def_readonly("recording_index", &RecordingMeta::recording_index)
      .def_readonly("chest_location", &RecordingMeta::chest_location)
      .def_property_readonly("device",
                             [](const RecordingMeta& r) { return r.device.token; })
      .def_property_readonly("device_known",
                             [](const RecordingMeta& r) { return r.device.kind != DeviceKind::other; })
      .def_property_readonly("acquisition_mode", [](const RecordingMeta& r) {
        return r.acquisition_mode == AcquisitionMode::single_channel ? "sc" : "mc";
      });

  py::class_<CycleAnnotation>(m, "CycleAnnotation")
      .def_readonly("begin_s", &CycleAnnotation::begin_s)
      .def_readonly("end_s", &CycleAnnotation::end_s)
      .def_readonly("crackle", &CycleAnnotation::crackle)
      .def_readonly("wheeze", &CycleAnnotation::wheeze);

  m.def("parse_recording_name", &parse_recording_name, py::arg("filename"));
  m.def("parse_annotation", &parse_annotation, py::arg("text"));
  m.def("serialize_annotations", &serialize_annotations, py::arg("cycles"));
  m.def(
      "cycle_label",
      [](bool crackle, bool wheeze, const std::string& task) {
        return cycle_label(crackle, wheeze, task_from_string(task)).label;
      },
      py::arg("crackle"), py::arg("wheeze"), py::arg("task"));
  m.def(
      "diagnosis_label",
      [](const std::string& diagnosis, const std::string& task) {
        return diagnosis_label(diagnosis, task_from_string(task)).label;
      },
      py::arg("diagnosis"), py::arg("task"));

  // ---- features
  m.def(
      "resample",
      [](const Array& x, int sr_in, int sr_out) {
        auto v = to_vector(x);
        auto y = resample(v, sr_in, sr_out);
        Array out(static_cast<py::ssize_t>(y.size()));
        std::copy(y.begin(), y.end(), out.mutable_data());
        return out;
      },
      py::arg("samples"), py::arg("sr_in"), py::arg("sr_out"));
  m.def(
      "reflect_pad",
      [](const Array& x, size_t target_len) {
        auto y = reflect_pad(to_vector(x), target_len);
        Array out(static_cast<py::ssize_t>(y.size()));
        std::copy(y.begin(), y.end(), out.mutable_data());
        return out;
      },
      py::arg("samples"), py::arg("target_len"));
  m.def(
      "segment",
      [](const Array& x, double length_s, double overlap, int sample_rate) {
        SegmentSpec spec{length_s, overlap, sample_rate};
        auto segs = segment(to_vector(x), spec);
        py::list out;
        for (const auto& s : segs) {
          Array a(static_cast<py::ssize_t>(s.samples.size()));
          std::copy(s.samples.begin(), s.samples.end(), a.mutable_data());
          out.append(py::make_tuple(a, s.start, s.src_len));
        }
        return out;
      },
      py::arg("samples"), py::arg("length_s"), py::arg("overlap"), py::arg("sample_rate"));
  m.def(
      "stft_magnitude",
      [](const Array& x, int nfft, int hop, int sample_rate) {
        SpectralConfig cfg;
        cfg.nfft = nfft;
        cfg.hop = hop;
        cfg.sample_rate_hz = sample_rate;
        cfg.n_mels = std::min(50, nfft / 2);
        const Stft s = stft_magnitude(to_vector(x), cfg);
        return matrix_to_array(s.mag, s.bins, s.frames);
      },
      py::arg("samples"), py::arg("nfft") = 512, py::arg("hop") = 256,
      py::arg("sample_rate") = 16000);
  m.def(
      "mel_filterbank",
      [](int n_mels, int nfft, int sample_rate, double fmin, double fmax, double warp,
         double warp_fhi) {
        const SpectralConfig cfg = spectral_config_from_kwargs(nfft, nfft / 2, n_mels, fmin,
                                                               fmax, sample_rate, warp, warp_fhi);
        return matrix_to_array(mel_filterbank(cfg), n_mels, nfft / 2 + 1);
      },
      py::arg("n_mels") = 50, py::arg("nfft") = 512, py::arg("sample_rate") = 16000,
      py::arg("fmin") = 0.0, py::arg("fmax") = 0.0, py::arg("warp") = 1.0,
      py::arg("warp_fhi") = 3500.0);
  m.def("vtlp_warp_frequency", &vtlp_warp_frequency, py::arg("f"), py::arg("alpha"),
        py::arg("fhi"), py::arg("nyquist"));
  m.def(
      "logmel",
      [](const Array& mags, const Array& bank, double floor_mag, int sample_rate) {
        const Stft s = stft_from_array(mags);
        SpectralConfig cfg;
        cfg.nfft = (s.bins - 1) * 2;
        cfg.hop = cfg.nfft / 2;
        cfg.n_mels = static_cast<int>(bank.shape(0));
        cfg.sample_rate_hz = sample_rate;
        cfg.floor_mag = floor_mag;
        const LogMelFeature f = logmel(s, to_vector(bank), cfg);
        return matrix_to_array(f.values, f.n_mels, f.n_frames);
      },
      py::arg("mags"), py::arg("bank"), py::arg("floor_mag") = 1e-10,
      py::arg("sample_rate") = 16000);
  m.def(
      "flip_frequency",
      [](const Array& feat) {
        LogMelFeature f;
        f.n_mels = static_cast<int>(feat.shape(0));
        f.n_frames = static_cast<int>(feat.shape(1));
        f.values = to_vector(feat);
        const LogMelFeature g = flip_frequency(f);
        return matrix_to_array(g.values, g.n_mels, g.n_frames);
      },
      py::arg("feature"));

  // ---- speccorr
  m.def(
      "segment_mean_spectrum",
      [](const Array& mags) {
        auto v = segment_mean_spectrum(stft_from_array(mags));
        Array out(static_cast<py::ssize_t>(v.size()));
        std::copy(v.begin(), v.end(), out.mutable_data());
        return out;
      },
      py::arg("mags"));
  m.def(
      "correction_coefficients",
      [](const Array& ref, const Array& mean, const std::string& device) {
        DeviceSpectrumProfile p;
        p.device = device;
        p.mean_spectrum = to_vector(mean);
        p.n_segments = 1;
        auto c = correction_coefficients(to_vector(ref), p);
        Array out(static_cast<py::ssize_t>(c.coeffs.size()));
        std::copy(c.coeffs.begin(), c.coeffs.end(), out.mutable_data());
        return out;
      },
      py::arg("reference"), py::arg("mean_spectrum"), py::arg("device") = "dev");
  m.def(
      "apply_correction",
      [](const Array& mags, const Array& coeffs) {
        CorrectionCoefficients c;
        c.coeffs = to_vector(coeffs);
        const Stft s = apply_correction(stft_from_array(mags), c);
        return matrix_to_array(s.mag, s.bins, s.frames);
      },
      py::arg("mags"), py::arg("coeffs"));

  // ---- augment
  m.def(
      "time_stretch",
      [](const Array& x, double factor, int sample_rate) {
        auto y = time_stretch(to_vector(x), factor, sample_rate);
        Array out(static_cast<py::ssize_t>(y.size()));
        std::copy(y.begin(), y.end(), out.mutable_data());
        return out;
      },
      py::arg("samples"), py::arg("factor"), py::arg("sample_rate"));
  m.def(
      "pitch_shift",
      [](const Array& x, double semitones, int sample_rate) {
        auto y = pitch_shift(to_vector(x), semitones, sample_rate);
        Array out(static_cast<py::ssize_t>(y.size()));
        std::copy(y.begin(), y.end(), out.mutable_data());
        return out;
      },
      py::arg("samples"), py::arg("semitones"), py::arg("sample_rate"));

  // ---- stochnorm
  py::class_<StochNormConfig>(m, "StochNormConfig")
      .def(py::init([](double p, double alpha, double eps) {
             StochNormConfig cfg;
             cfg.p = p;
             cfg.alpha = alpha;
             cfg.eps = eps;
             return cfg;
           }),
           py::arg("p") = 0.5, py::arg("alpha") = 0.1, py::arg("eps") = 1e-5)
      .def_readwrite("p", &StochNormConfig::p)
      .def_readwrite("alpha", &StochNormConfig::alpha)
      .def_readwrite("eps", &StochNormConfig::eps);

  py::class_<StochNormState>(m, "StochNormState")
      .def_static("identity", &StochNormState::identity, py::arg("channels"), py::arg("cfg"))
      .def_static(
          "from_pretrained",
          [](const Array& gamma, const Array& beta, const Array& mean, const Array& var,
             const StochNormConfig& cfg) {
            return StochNormState::from_pretrained(to_vector(gamma), to_vector(beta),
                                                   to_vector(mean), to_vector(var), cfg);
          },
          py::arg("gamma"), py::arg("beta"), py::arg("moving_mean"), py::arg("moving_var"),
          py::arg("cfg"))
      .def_readwrite("gamma", &StochNormState::gamma)
      .def_readwrite("beta", &StochNormState::beta)
      .def_readwrite("moving_mean", &StochNormState::moving_mean)
      .def_readwrite("moving_var", &StochNormState::moving_var);

  m.def(
      "stochnorm_forward_train",
      [](const Array& x, StochNormState& state, uint64_t seed) {
        Rng rng(seed);
        const Tensor t = tensor_from_array(x);
        const StochNormForward fwd = stochnorm_forward_train(t, state, rng);
        return py::make_tuple(tensor_to_array(fwd.y),
                              std::vector<int>(fwd.branch_mask.begin(), fwd.branch_mask.end()),
                              fwd.batch_mean, fwd.batch_var);
      },
      py::arg("x"), py::arg("state"), py::arg("seed") = 0);
  m.def(
      "stochnorm_forward_eval",
      [](const Array& x, const StochNormState& state) {
        return tensor_to_array(stochnorm_forward_eval(tensor_from_array(x), state));
      },
      py::arg("x"), py::arg("state"));
  m.def(
      "stochnorm_update_moving",
      [](StochNormState& state, const Array& mean, const Array& var) {
        stochnorm_update_moving(state, to_vector(mean), to_vector(var));
      },
      py::arg("state"), py::arg("batch_mean"), py::arg("batch_var"));

  // ---- cotuning
  py::class_<CategoryRelationship>(m, "CategoryRelationship")
      .def_property_readonly("matrix",
                             [](const CategoryRelationship& r) {
                               return matrix_to_array(r.matrix, r.n_target, r.n_source);
                             })
      .def_property_readonly("target_given_source",
                             [](const CategoryRelationship& r) {
                               return matrix_to_array(r.target_given_source, r.n_target,
                                                      r.n_source);
                             })
      .def_readonly("calibration_temperature", &CategoryRelationship::calibration_temperature);

  m.def("calibrate_temperature", &calibrate_temperature, py::arg("logits"), py::arg("labels"));
  m.def(
      "relationship_direct",
      [](const std::vector<std::vector<double>>& probs, const std::vector<int>& labels,
         int64_t n_target) { return relationship_direct(probs, labels, n_target); },
      py::arg("source_probs"), py::arg("target_labels"), py::arg("n_target"));
  m.def(
      "relationship_reverse",
      [](const std::vector<std::vector<double>>& probs, const std::vector<int>& labels,
         int64_t n_target, const Array& prior, uint64_t seed) {
        return relationship_reverse(probs, labels, n_target, to_vector(prior), seed);
      },
      py::arg("source_probs"), py::arg("target_labels"), py::arg("n_target"), py::arg("prior"),
      py::arg("seed") = 0);
  m.def(
      "bayes_invert",
      [](const Array& p_t_given_s, const Array& prior) {
        const int64_t n_target = p_t_given_s.shape(0);
        const int64_t n_source = p_t_given_s.shape(1);
        auto out = bayes_invert(to_vector(p_t_given_s), n_target, n_source, to_vector(prior));
        return matrix_to_array(out, n_target, n_source);
      },
      py::arg("p_t_given_s"), py::arg("prior"));
  m.def(
      "loss_cotuning",
      [](const Array& target_logits, const Array& source_logits, int y_t,
         const CategoryRelationship& rel, double lambda) {
        return loss_cotuning(to_vector(target_logits), to_vector(source_logits), y_t, rel,
                             lambda);
      },
      py::arg("target_logits"), py::arg("source_logits"), py::arg("y_t"), py::arg("rel"),
      py::arg("lambda_") = 1.0);
  m.def(
      "cross_entropy",
      [](const Array& logits, int label) { return cross_entropy(to_vector(logits), label); },
      py::arg("logits"), py::arg("label"));

  // ---- metrics
  py::class_<MetricsReport>(m, "MetricsReport")
      .def_readonly("SE", &MetricsReport::SE)
      .def_readonly("SP", &MetricsReport::SP)
      .def_readonly("AS", &MetricsReport::AS)
      .def_readonly("HS", &MetricsReport::HS)
      .def_readonly("n_units", &MetricsReport::n_units)
      .def_property_readonly("P_plus",
                             [](const MetricsReport& r) { return r.precision_pos; })
      .def_property_readonly("Se_pos",
                             [](const MetricsReport& r) { return r.sensitivity_pos; })
      .def_property_readonly("F1", [](const MetricsReport& r) { return r.f1; })
      .def_property_readonly("confusion", [](const MetricsReport& r) {
        return matrix_to_array(std::vector<double>(r.confusion.begin(), r.confusion.end()),
                               r.n_classes, r.n_classes);
      });

  m.def(
      "compute_metrics",
      [](const std::vector<int>& preds, const std::vector<int>& labels, const std::string& task) {
        return compute_metrics(preds, labels, task_from_string(task));
      },
      py::arg("preds"), py::arg("labels"), py::arg("task"));
  m.def(
      "majority_vote",
      [](const std::vector<int>& preds, const std::vector<std::vector<double>>& probs) {
        return majority_vote(preds, probs);
      },
      py::arg("segment_predictions"), py::arg("tiebreak_probs"));

  // ---- backbone (archive-driven, for cross-checks and embedding work)
  m.def(
      "backbone_forward",
      [](const std::string& archive, const std::string& depth, const Array& x) {
        BackboneSpec spec;
        spec.depth = backbone_depth_from_string(depth);
        spec.pretrained_archive = archive;
        Model model = build(spec);
        return tensor_to_array(model.backbone->forward(tensor_from_array(x), false));
      },
      py::arg("archive"), py::arg("depth"), py::arg("x"),
      "Pooled embeddings of a [N,3,H,W] batch under an imported backbone");
  m.def(
      "backbone_pooled_dim",
      [](const std::string& depth) {
        BackboneSpec spec;
        spec.depth = backbone_depth_from_string(depth);
        Model model = build(spec);
        return model.pooled_dim();
      },
      py::arg("depth"));
  m.def(
      "backbone_parameter_count",
      [](const std::string& depth, int64_t n_source) {
        BackboneSpec spec;
        spec.depth = backbone_depth_from_string(depth);
        Model model = build(spec);
        attach_heads(model, n_source, n_source, TrainMode::cotuning, 0);
        // count backbone + source head, the reference model's parameter set
        int64_t n = 0;
        for (const auto& p : model.params())
          if (p.grad && p.name.rfind("head_target.", 0) != 0) n += static_cast<int64_t>(p.value->size());
        return n;
      },
      py::arg("depth"), py::arg("n_source") = 1000);

  // ---- experiment
  m.def("make_synthetic_corpus", &make_synthetic_corpus, py::arg("dir"), py::arg("n_clips"),
        py::arg("classes") = 2, py::arg("seed") = 0);
  m.def(
      "run_smoke",
      [](const std::string& work_dir, uint64_t seed, int epochs) {
        const SmokeResult r = run_smoke(work_dir, seed, epochs);
        py::dict out;
        for (const auto& [mode, report] : r.by_mode) {
          py::dict d;
          d["AS"] = report.AS;
          d["SP"] = report.SP;
          d["SE"] = report.SE;
          d["seconds"] = r.seconds_by_mode.at(mode);
          out[py::str(mode)] = d;
        }
        out["device_gap_before"] = r.device_gap_before;
        out["device_gap_after"] = r.device_gap_after;
        out["deterministic"] = r.deterministic;
        return out;
      },
      py::arg("work_dir"), py::arg("seed") = 7, py::arg("epochs") = 5);
}
