#include "lungsc/log.hpp"

#include <iostream>
#include <mutex>

namespace lungsc {

namespace {
std::mutex g_mutex;
WarnSink g_sink;
}  // namespace

void set_warn_sink(WarnSink sink) {
  std::lock_guard<std::mutex> lock(g_mutex);
  g_sink = std::move(sink);
}

void warn(const std::string& msg) {
  std::lock_guard<std::mutex> lock(g_mutex);
  if (g_sink) {
    g_sink(msg);
  } else {
    std::cerr << "[warn] " << msg << "\n";
  }
}

}  // namespace lungsc
