"""
Web dashboard for the remapped PIC simulator using Streamlit
"""

import pandas as pd
import plotly.graph_objects as go
import streamlit as st
from plotly.subplots import make_subplots

from config import PRESETS, preset_config
from diagnostics import fit_damping_rate, sliding_growth_rates
from errors import PICError
from pic_engine import SimulationResult, run_comparison, run_simulation


# Page config
st.set_page_config(
    page_title="Remapped PIC Simulator",
    page_icon="🌀",
    layout="wide"
)


def plot_series(results, labels):
    """Field amplitude (log scale) and RMS sizes against time"""
    fig = make_subplots(rows=2, cols=1, shared_xaxes=True, vertical_spacing=0.08,
                        subplot_titles=("|E_x|_2", "RMS x and vx"))
    for result, label in zip(results, labels):
        frame = result.series.to_frame()
        fig.add_trace(go.Scatter(x=frame['t'], y=frame['ex_l2'], mode='lines', name=f"{label} |E_x|"), row=1, col=1)
        fig.add_trace(go.Scatter(x=frame['t'], y=frame['rms_x'], mode='lines', name=f"{label} x_rms"), row=2, col=1)
        fig.add_trace(go.Scatter(x=frame['t'], y=frame['rms_vx'], mode='lines', line=dict(dash='dash'),
                                 name=f"{label} vx_rms"), row=2, col=1)
    fig.update_yaxes(type='log', row=1, col=1)
    fig.update_xaxes(title_text='t', row=2, col=1)
    fig.update_layout(height=700, hovermode='x unified')
    return fig


def plot_projection(result: SimulationResult, t: float):
    """Heatmap of F(x, vx) at a snapshot time"""
    projection = result.snapshots[t]
    fig = go.Figure(go.Heatmap(x=projection.grid.x_nodes, y=projection.grid.vx_nodes, z=projection.values.T,
                               colorscale='Viridis'))
    fig.update_layout(title=f"F(x, vx) at t = {t:g}", xaxis_title='x', yaxis_title='vx', height=500)
    return fig


def show_metrics(result: SimulationResult):
    frame = result.series.to_frame()
    col1, col2, col3, col4 = st.columns(4)
    with col1:
        st.metric("Particles", f"{len(result.particles):,}")
    with col2:
        st.metric("Total Charge", f"{frame['total_q'].iloc[-1]:.10g}")
    with col3:
        st.metric("Remaps", len(result.remap_reports))
    with col4:
        st.metric("Final |E_x|", f"{frame['ex_l2'].iloc[-1]:.3e}")

    if result.config.problem.kind == 'landau':
        try:
            st.info(f"Fitted damping rate: {fit_damping_rate(result.series):.4f}")
        except PICError as exc:
            st.warning(f"Damping fit unavailable: {exc}")
    elif result.config.problem.kind == 'two_stream':
        frame = result.series.to_frame()
        rates = sliding_growth_rates(frame['t'], frame['ex_l2'], width=5.0)
        if len(rates):
            st.info(f"Peak growth rate: {rates['rate'].max():.4f}")


def main():
    st.title("🌀 Remapped PIC Simulator")
    st.caption("2D2V Vlasov-Poisson particle-in-cell with adaptive phase-space remapping")

    st.sidebar.header("⚙️ Configuration")
    preset = st.sidebar.selectbox("Preset", PRESETS)
    t_end = st.sidebar.number_input("End time", min_value=0.1, value=5.0, step=0.5)
    remap_interval = st.sidebar.number_input("Remap interval (0 = classical PIC)", min_value=0, value=5, step=1)
    resolution = 64
    if preset == 'beam':
        resolution = st.sidebar.selectbox("Beam resolution", [32, 64, 128], index=1)
    compare = st.sidebar.checkbox("Compare with classical PIC", value=False)
    run = st.sidebar.button("🚀 Run Simulation", type="primary")

    if run:
        flags = [f"--t_end={t_end}", f"--remap_interval={remap_interval}", f"--snapshot_times=0,{t_end}"]
        try:
            config = preset_config(preset, flags, resolution)
            with st.spinner(f"Running {preset}..."):
                if compare and remap_interval > 0:
                    st.session_state['run'] = (list(run_comparison(config, progress=False)), ['classical', 'remapped'])
                else:
                    st.session_state['run'] = ([run_simulation(config, progress=False)], [preset])
        except (PICError, ValueError) as exc:
            st.error(f"❌ {exc}")
            return

    if 'run' not in st.session_state:
        st.info("Pick a preset in the sidebar and press Run")
        return
    # Results survive the reruns triggered by the snapshot slider
    results, labels = st.session_state['run']
    st.success(f"✓ Finished at t = {results[-1].final_time:g}")

    tabs = st.tabs(labels)
    for tab, result in zip(tabs, results):
        with tab:
            show_metrics(result)

    st.plotly_chart(plot_series(results, labels), use_container_width=True)

    final = results[-1]
    if final.snapshots:
        times = sorted(final.snapshots)
        t = st.select_slider("Snapshot", options=times, value=times[-1])
        st.plotly_chart(plot_projection(final, t), use_container_width=True)

    st.subheader("📝 Time Series")
    st.dataframe(final.series.to_frame(), use_container_width=True, hide_index=True)
    if final.remap_reports:
        st.subheader("🔁 Remap Reports")
        rows = [{'step': step, 'particles': r.n_particles, 'dropped': r.dropped, 'lost': r.lost,
                 'min f': r.min_f, 'negative cells': r.redistribution.negative_before,
                 'conservation error': r.conservation_error} for step, r in final.remap_reports]
        st.dataframe(pd.DataFrame(rows), use_container_width=True, hide_index=True)


if __name__ == "__main__":
    main()
