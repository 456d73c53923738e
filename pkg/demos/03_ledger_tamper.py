# %% [markdown]
# A small consortium ledger, and what happens when someone edits it
# -----------------------------------------------------------------
# Three organisations (SP1, SP2, HCP); two must endorse each transaction.

# %%
import tempfile
from importlib import resources
from pathlib import Path

from slachain import Ledger, LedgerConfig, default_catalog, generate_contract, load_sla
from slachain.ledger import EndorsementRejected, block_spans, persist, verify_file

contract = generate_contract(load_sla(resources.files("slachain.data.sla").joinpath("rpm.json")),
                             default_catalog())
ledger = Ledger(LedgerConfig(block_cut_size=4))
ledger.deploy(contract)

for i in range(12):
    avail = "98.5" if i % 5 == 0 else "99.97"
    ledger.submit(contract, "capture_eoi_sensing_service_slo_update",
                  [f'{{"SENSOR_AVAILABILITY": {avail}, "SENSING_ACCURACY": 97, '
                   f'"DATA_TIMELINESS": 800, "ID": "s{i % 3}"}}'], "SP1")
ledger.commit_pending()
print("height", ledger.height, "tip", ledger.tip.block_hash.hex()[:16])

# %% [markdown]
# Endorsement needs a quorum.  If two peers refuse, nothing gets ordered.

# %%
ledger.peers["SP2"].refuse = ledger.peers["HCP"].refuse = True
try:
    ledger.submit(contract, "capture_eoi_sensing_service_slo_update", ['{"ID": "s0"}'], "SP1")
except EndorsementRejected as exc:
    print("rejected:", exc)
ledger.peers["SP2"].refuse = ledger.peers["HCP"].refuse = False

# %% [markdown]
# Persist, then flip one byte inside block 2 and verify again.

# %%
path = Path(tempfile.mkdtemp()) / "rpm.ledger"
persist(ledger, path)
print("clean file:", verify_file(path))

data = bytearray(path.read_bytes())
start, end = block_spans(bytes(data))[2]
data[(start + end) // 2] ^= 0x20
path.write_bytes(bytes(data))
print("edited file:", verify_file(path))
