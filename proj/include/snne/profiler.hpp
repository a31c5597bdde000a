#pragma once

#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "snne/errors.hpp"
#include "snne/network.hpp"

// Hardware-oriented accounting: per-layer FLOPs of the non-spiking
// counterpart, measured spike rates, synaptic operations (SOPs = FLOPs x
// spike rate), and energy in joules from per-operation costs.

namespace snne {

// Energy per operation for a 45nm CMOS process, in picojoules.
struct EnergyTable {
  double e_mac_pj = 4.6;
  double e_acc_pj = 0.9;

  void validate() const {
    if (!(e_mac_pj > 0.0) || !(e_acc_pj > 0.0)) {
      throw ConfigError("EnergyTable: energies must be strictly positive");
    }
  }
};

// FLOPs of one layer in the non-spiking counterpart:
// in_c * out_c * k^2 * out_h * out_w. Pools, concats and neuron updates are
// costed at zero (nullopt).
inline std::optional<std::uint64_t> layer_flops(const LayerDesc& layer) {
  if (layer.kind != LayerKind::Conv && layer.kind != LayerKind::Deconv) {
    return std::nullopt;
  }
  return static_cast<std::uint64_t>(layer.in_c) * layer.out_c * layer.kernel *
         layer.kernel * layer.out_h * layer.out_w;
}

// Spikes emitted by the LIF layer with the given layer id across all
// timesteps, divided by its neuron count (dataset-averaged when the trace
// accumulates several images).
inline double spike_rate(const SpikeTrace& trace, int layer_id) {
  for (const auto& a : trace.lif) {
    if (a.layer_id == layer_id) {
      const double neurons = static_cast<double>(a.neurons_per_image) *
                             static_cast<double>(trace.images);
      return a.total_spikes / neurons;
    }
  }
  throw InternalError("spike_rate: no LIF layer with id " +
                      std::to_string(layer_id) + " in trace");
}

struct LayerCost {
  int layer_id = 0;
  LayerKind kind = LayerKind::Conv;
  std::uint64_t flops = 0;
  double spike_rate = 0.0;
  double sops = 0.0;
  double energy_cnn_j = 0.0;
  double energy_snn_j = 0.0;
};

struct EnergyReport {
  std::vector<LayerCost> layers;
  double total_flops = 0.0;
  double total_sops = 0.0;
  double e_cnn_j = 0.0;
  double e_snn_j = 0.0;
  double delta_e_percent = 0.0;

  double gflops() const { return total_flops / 1e9; }
  double gsops() const { return total_sops / 1e9; }
};

// Totals -> joules and percentage reduction. Shared by the report builder
// and by direct arithmetic checks on published totals.
inline void summarize_energy(EnergyReport& report, const EnergyTable& table) {
  report.e_cnn_j = report.total_flops * table.e_mac_pj * 1e-12;
  report.e_snn_j = report.total_sops * table.e_acc_pj * 1e-12;
  report.delta_e_percent =
      (report.e_cnn_j - report.e_snn_j) / report.e_cnn_j * 100.0;
}

// Builds the per-layer cost table. Every conv/deconv scales its FLOPs by the
// spike rate of the LIF layer it feeds; the final conv feeds the non-firing
// readout and therefore uses the spike rate of its input layer instead.
template <typename Scalar>
EnergyReport energy_report(const LayerGraph<Scalar>& graph,
                           const SpikeTrace& trace, const EnergyTable& table) {
  table.validate();
  if (static_cast<int>(trace.lif.size()) != graph.lif_layer_count() - 1) {
    throw InternalError(
        "energy_report: trace does not match graph (expected " +
        std::to_string(graph.lif_layer_count() - 1) + " LIF activities, got " +
        std::to_string(trace.lif.size()) + ")");
  }
  if (trace.images <= 0) {
    throw InternalError("energy_report: trace covers no images");
  }

  EnergyReport report;
  const auto& layers = graph.layers;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerDesc& l = layers[i];
    const auto flops = layer_flops(l);
    if (!flops) continue;

    // Associated LIF: the next Lif layer; for the final conv (followed by
    // the readout) the closest preceding Lif.
    int lif_id = -1;
    for (std::size_t j = i + 1; j < layers.size(); ++j) {
      if (layers[j].kind == LayerKind::Lif) {
        lif_id = layers[j].id;
        break;
      }
      if (layers[j].kind == LayerKind::LifReadout) break;
    }
    if (lif_id < 0) {
      for (std::size_t j = i; j-- > 0;) {
        if (layers[j].kind == LayerKind::Lif) {
          lif_id = layers[j].id;
          break;
        }
      }
    }
    if (lif_id < 0) {
      throw InternalError("energy_report: no LIF associated with layer " +
                          std::to_string(l.id));
    }

    LayerCost cost;
    cost.layer_id = l.id;
    cost.kind = l.kind;
    cost.flops = *flops;
    cost.spike_rate = spike_rate(trace, lif_id);
    cost.sops = static_cast<double>(cost.flops) * cost.spike_rate;
    cost.energy_cnn_j = static_cast<double>(cost.flops) * table.e_mac_pj * 1e-12;
    cost.energy_snn_j = cost.sops * table.e_acc_pj * 1e-12;
    report.total_flops += static_cast<double>(cost.flops);
    report.total_sops += cost.sops;
    report.layers.push_back(cost);
  }
  summarize_energy(report, table);
  return report;
}

inline void write_energy_csv(const EnergyReport& report, std::ostream& out) {
  out << "layer,kind,flops,spike_rate,sops,energy_cnn_j,energy_snn_j\n";
  char buf[160];
  for (const auto& c : report.layers) {
    std::snprintf(buf, sizeof(buf), "%d,%s,%llu,%.9g,%.9g,%.9g,%.9g\n",
                  c.layer_id, layer_kind_name(c.kind),
                  static_cast<unsigned long long>(c.flops), c.spike_rate,
                  c.sops, c.energy_cnn_j, c.energy_snn_j);
    out << buf;
  }
  std::snprintf(buf, sizeof(buf), "total,,%.0f,,%.9g,%.9g,%.9g\n",
                report.total_flops, report.total_sops, report.e_cnn_j,
                report.e_snn_j);
  out << buf;
}

inline std::string energy_summary(const EnergyReport& report) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "GFLOPs (non-spiking): %.2f\nGSOPs: %.2f\n"
                "E_CNN (J): %.4f\nE_SNN (J): %.4f\ndelta_E (%%): %.2f",
                report.gflops(), report.gsops(), report.e_cnn_j,
                report.e_snn_j, report.delta_e_percent);
  return buf;
}

}  // namespace snne
