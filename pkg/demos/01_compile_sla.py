# %% [markdown]
# Compiling an SLA into a monitoring contract
# -------------------------------------------
# The bundled RPM (remote patient monitoring) agreement covers five workflow
# activities plus an application-level SLO.  We parse it, look at what the
# catalog resolved, then compile it.

# %%
from importlib import resources

from slachain import default_catalog, generate_contract, load_sla, serialize_sla
from slachain.contract import MethodKind

sla_path = resources.files("slachain.data.sla").joinpath("rpm.json")
catalog = default_catalog()
sla = load_sla(sla_path, catalog)

print("agreement:", sla.start_date, "->", sla.end_date)
for activity in sla.activities:
    print(f"  {activity.name:24s}", ", ".join(t.type_name for t in activity.targets))
print("  application SLO rules:", len(sla.application_slo.rules))

# %% [markdown]
# Thresholds keep the units they were written in; comparisons use the
# canonical value (milliseconds, bytes, ...).

# %%
for _, target, rule in sla.iter_rules():
    if rule.unit is not None and rule.unit.scale != 1:
        print(f"{rule.metric_key:20s} {rule.operator.symbol} {rule.threshold} {rule.unit.symbol}"
              f"  -> {rule.canonical_threshold}")

# %%
contract = generate_contract(sla, catalog)
updates = contract.descriptors(MethodKind.UPDATE)
print(len(contract.methods), "methods,", len(updates), "of them update methods")
print([d.name for d in updates][:4], "...")

# %% [markdown]
# The documentation tells a client what each method expects; the listing is
# a readable rendering of the dispatch logic, one guard per rule.

# %%
print(contract.docs.split("\n\n")[0])
print()
listing = contract.listing
start = listing.index("method examine_captured_eoi_gateway_slo_update(")
print(listing[start:listing.index("\nmethod ", start + 1)])

# %%
# serializing is canonical, so the fingerprint is stable across runs
text = serialize_sla(sla)
print(len(text), "bytes, fingerprint", contract.sla_fingerprint[:16])
