import streamlit as st
import pandas as pd
import plotly.express as px
from pathlib import Path
import json

# Import custom modules
from config.tips_config import DEFAULT_DATA_DIR, TipsConfig
from src.bench import MetricsReport, emit_report, reference_report
from src.contract import footprint
from src.errors import TipsError
from src.ledger import verify_block_log
from src.models.stored_object import StoredObject
from src.models.transaction import AuditEventType
from src.storage import Workspace

# Page configuration
st.set_page_config(
    page_title="TIPS - Ledger Explorer",
    page_icon="🛡️",
    layout="wide",
    initial_sidebar_state="expanded"
)

# Initialize session state
if 'data_dir' not in st.session_state:
    st.session_state.data_dir = str(DEFAULT_DATA_DIR)


@st.cache_resource(show_spinner="Loading workspace...")
def load_workspace(data_dir, stamp):
    """Load a workspace read-only; stamp invalidates the cache when the block logs change"""
    workspace = Workspace(Path(data_dir))
    return workspace, workspace.load(TipsConfig(data_dir=Path(data_dir)))


def workspace_stamp(data_dir):
    logs = sorted(Path(data_dir).glob("ledger/*/blocks.jsonl"))
    return tuple((str(p), p.stat().st_mtime_ns) for p in logs)


def main():
    st.sidebar.title("🛡️ TIPS Explorer")
    data_dir = st.sidebar.text_input("Data directory", st.session_state.data_dir)
    st.session_state.data_dir = data_dir

    if not Path(data_dir).exists():
        st.title("🛡️ TIPS Ledger Explorer")
        st.info(f"No workspace at `{data_dir}`. Run `python tips.py demo --data-dir {data_dir}` to create one.")
        show_benchmark_page()
        return

    try:
        workspace, state = load_workspace(data_dir, workspace_stamp(data_dir))
    except TipsError as e:
        st.error(f"❌ ERROR {e.code}: {e.message}")
        return

    if state.network is None or not state.network.channels:
        st.title("🛡️ TIPS Ledger Explorer")
        st.warning("⚠️ This workspace has no channels yet")
        return

    channels = sorted(state.network.channels)
    channel_id = st.sidebar.selectbox("Channel", channels)
    channel = state.network.channel(channel_id)

    st.sidebar.markdown("---")
    page = st.sidebar.selectbox("Navigate to:", [
        "📊 Dashboard",
        "🧱 Blocks",
        "📜 Audit Trail",
        "🗄️ Objects",
        "🔗 Chain Verification",
        "⏱️ Benchmarks",
    ])
    st.sidebar.markdown("---")
    st.sidebar.caption("Read-only: nothing is decrypted or committed from here.")

    if page == "📊 Dashboard":
        dashboard_page(state, channel)
    elif page == "🧱 Blocks":
        blocks_page(channel)
    elif page == "📜 Audit Trail":
        audit_page(channel)
    elif page == "🗄️ Objects":
        objects_page(channel)
    elif page == "🔗 Chain Verification":
        verification_page(workspace, channel)
    else:
        show_benchmark_page()


def dashboard_page(state, channel):
    st.title(f"📊 {channel.channel_id}")
    st.markdown(f"**Members:** {', '.join(sorted(channel.member_orgs))} · "
                f"**Policy:** {channel.endorsement_policy.value} · **Mode:** {channel.mode.value}"
                f"{' · **closed**' if channel.closed else ''}")

    sizes = footprint(channel, state.network.store)
    col1, col2, col3, col4 = st.columns(4)
    with col1:
        st.metric("🧱 Height", channel.height)
    with col2:
        st.metric("🔑 World-state keys", sizes['world_state_keys'])
    with col3:
        st.metric("⛓️ On-chain", f"{sizes['on_chain_bytes'] / 1024:.1f} KiB")
    with col4:
        st.metric("📦 Off-chain", f"{sizes['off_chain_bytes'] / 1024:.1f} KiB")

    events = audit_frame(channel.audit_log)
    if events.empty:
        st.info("No audited events yet")
        return
    counts = events.groupby('event_type').size().reset_index(name='count')
    fig = px.bar(counts, x='event_type', y='count', title="Audited events by type")
    st.plotly_chart(fig, use_container_width=True)


def blocks_frame(channel):
    rows = []
    for block in channel.blocks:
        valid = sum(1 for tx in block.transactions if tx.is_valid)
        rows.append({
            'height': block.height,
            'timestamp': block.timestamp,
            'transactions': len(block.transactions),
            'valid': valid,
            'invalid': len(block.transactions) - valid,
            'block_hash': block.block_hash.hex[:16] if block.block_hash else "",
            'prev_hash': block.prev_hash.hex[:16],
        })
    return pd.DataFrame(rows)


def blocks_page(channel):
    st.title("🧱 Blocks")
    df = blocks_frame(channel)
    st.dataframe(df, use_container_width=True)

    if len(df) > 1:
        chart = df[df['height'] > 0].melt(id_vars=['height'], value_vars=['valid', 'invalid'],
                                          var_name='validation', value_name='count')
        fig = px.bar(chart, x='height', y='count', color='validation', title="Transactions per block")
        st.plotly_chart(fig, use_container_width=True)

    height = st.number_input("Inspect block", min_value=0, max_value=channel.height, value=channel.height)
    block = channel.blocks[int(height)]
    tx_rows = [{
        'tx_id': tx.tx_id[:16],
        'operation': tx.proposal.operation,
        'submitter': tx.proposal.submitter,
        'endorsers': ", ".join(e.endorser_peer for e in tx.endorsements),
        'validation': tx.validation_code.value if tx.validation_code else "",
    } for tx in block.transactions]
    st.dataframe(pd.DataFrame(tx_rows), use_container_width=True)


def audit_frame(events):
    return pd.DataFrame([event.to_dict() for event in events],
                        columns=['wall_time', 'event_type', 'actor', 'subject', 'block_height', 'tx_id'])


def audit_page(channel):
    st.title("📜 Audit Trail")
    df = audit_frame(channel.audit_log)
    if df.empty:
        st.info("No audited events yet")
        return

    col1, col2 = st.columns(2)
    with col1:
        types = st.multiselect("Event type", [t.value for t in AuditEventType])
    with col2:
        actors = st.multiselect("Actor serial", sorted(df['actor'].unique()))
    if types:
        df = df[df['event_type'].isin(types)]
    if actors:
        df = df[df['actor'].isin(actors)]
    st.dataframe(df, use_container_width=True)


def objects_page(channel):
    st.title("🗄️ Objects")
    state = channel.snapshot()
    rows = []
    for key in state.keys("object/"):
        entry = state.get(key)
        if entry is None or not entry.inline or entry.value is None:
            continue
        record = StoredObject.from_dict(entry.value)
        rows.append({
            'key': record.object_key,
            'version': record.version,
            'size': record.size,
            'checksum': record.checksum.hex[:16],
            'storage': "off-chain" if record.is_off_chain else "inline",
            'tombstoned': record.tombstoned,
            'subjects': ", ".join(record.subjects),
        })
    if not rows:
        st.info("No objects stored on this channel")
        return
    st.dataframe(pd.DataFrame(rows), use_container_width=True)


def verification_page(workspace, channel):
    st.title("🔗 Chain Verification")
    if st.button("Verify persisted block log"):
        report = verify_block_log(workspace.block_log(channel.channel_id))
        if report.ok:
            st.success(f"✅ {report.blocks_checked} blocks verified")
        else:
            st.error(f"❌ Block {report.first_bad_height}: {report.detail}")
    if st.button("Verify in-memory chain"):
        report = channel.verify_chain()
        if report.ok:
            st.success(f"✅ {report.blocks_checked} blocks verified")
        else:
            st.error(f"❌ Block {report.first_bad_height}: {report.detail}")


def show_benchmark_page():
    st.title("⏱️ Benchmark Reports")
    uploaded = st.file_uploader("Report JSON (from `tips bench run --format json`)", type=["json"])
    reports = {"Published reference": reference_report()}
    if uploaded is not None:
        try:
            reports[uploaded.name] = MetricsReport.from_dict(json.loads(uploaded.getvalue().decode("utf-8")))
        except (ValueError, KeyError) as e:
            st.error(f"❌ Could not read report: {str(e)}")

    df = pd.DataFrame([{'report': name, **{k: v for k, v in r.to_dict().items() if k != 'config'}}
                       for name, r in reports.items()])
    st.dataframe(df, use_container_width=True)

    latency = df.melt(id_vars=['report'], value_vars=['latency_min', 'latency_avg', 'latency_max'],
                      var_name='statistic', value_name='seconds')
    fig = px.bar(latency, x='statistic', y='seconds', color='report', barmode='group', title="Latency")
    st.plotly_chart(fig, use_container_width=True)

    with st.expander("Reference report"):
        st.text(emit_report(reports["Published reference"], "human"))


if __name__ == "__main__":
    main()
