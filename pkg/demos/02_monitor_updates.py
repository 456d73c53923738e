# %% [markdown]
# Calling the contract directly
# -----------------------------
# Before involving a ledger, run the generated methods against an in-memory
# key-value store.  Three updates to the same gateway: healthy, degraded,
# and one that forgot a metric.

# %%
import datetime as dt
import json
from importlib import resources

from slachain import MemoryState, default_catalog, generate_contract, invoke, load_sla

contract = generate_contract(load_sla(resources.files("slachain.data.sla").joinpath("rpm.json")),
                             default_catalog())
state = MemoryState()
method = "examine_captured_eoi_gateway_slo_update"
t = dt.datetime(2020, 6, 1, 9, 0, tzinfo=dt.timezone.utc)

for i, body in enumerate([
    '{"GATEWAY_AVAILABILITY": 99.95, "PACKET_LOSS": 0.1, "ID": "gw-7"}',
    '{"GATEWAY_AVAILABILITY": 99.0, "PACKET_LOSS": 0.1, "ID": "gw-7"}',
    '{"PACKET_LOSS": 0.1, "ID": "gw-7"}',
]):
    state.now = t + dt.timedelta(minutes=i)
    r = invoke(contract, state, method, [body], state.now)
    print(r.status.value, "|", r.payload[:70])

# %% [markdown]
# Violations accumulate per resource ID.  The missing metric was recorded
# as evidence even though the update itself was refused.

# %%
resp = invoke(contract, state, "get_examine_captured_eoi_gateway_slo_violations", ["gw-7"], t)
for record in json.loads(resp.payload):
    print(record["message"])

# %%
latest = invoke(contract, state, "GET_LATEST_EXAMINE_CAPTURED_EOI_GATEWAY_SLO_UPDATE", ["gw-7"], t)
print("latest stored:", latest.payload)
history = invoke(contract, state, "history", ["examine_captured_eoi_gateway_slo", "gw-7"], t)
print("history entries:", len(json.loads(history.payload)))
print(invoke(contract, state, "no_such_method", [], t).payload)
