from blinker import Signal, signal
from ordered_set import OrderedSet

# Signals will call functions in the order of connection
Signal.set_class = OrderedSet

# Log and model signals

log_read = signal("log_read")
model_learned = signal("model_learned")
model_prepared = signal("model_prepared")

# Stream signals, kept off the per-event path except for evictions

case_evicted = signal("case_evicted")
line_malformed = signal("line_malformed")
monitor_finalized = signal("monitor_finalized")
