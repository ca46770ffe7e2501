import logging

from fastmcp import FastMCP

from src.cli import cmd_histogram, cmd_pack, cmd_verify
from src.config import get_settings
from src.models import create_tables, list_runs
from src.pack import describe, read_packed, unpack_file
from src.report import size_table, to_markdown

settings = get_settings()

# Set up logging
logging.basicConfig(level=settings.log_level)
logger = logging.getLogger(__name__)

mcp = FastMCP("seofp-toolkit")


async def verify_model(model_path: str, data_dir: str = "", count: int = 100) -> str:
    """Check that integer-add inference matches float32 multiply inference bit for bit."""
    try:
        result = cmd_verify(model_path, data_dir or None, count)
        response = f"Verdict: {result['verdict']}\n"
        response += f"- Mismatched output words: {result['mismatched_words']} of {result['outputs_compared']}\n"
        response += f"- Flushed to zero: {result['flush_to_zero']}\n"
        response += f"- Sign cases: {', '.join(result['sign_cases'])}"
        return response
    except Exception as e:
        return f"Error verifying model: {str(e)}"

mcp.tool()(verify_model)


async def pack_model(model_path: str, encoding: str = "se9", out_path: str = "") -> str:
    """Write a model as full32, se9 (sign + exponent) or codebook."""
    try:
        out_path = out_path or model_path.rsplit(".", 1)[0] + f"-{encoding}.seofp"
        result = cmd_pack(model_path, encoding, out_path)
        return f"Packed {result['parameters']} parameters as {encoding}:\n" \
               f"- File: {result['path']}\n" \
               f"- Size: {result['size_bytes'] / 1024:.1f} KB\n" \
               f"- Change vs full32: {result['change_pct']:+.3f}%"
    except Exception as e:
        return f"Error packing model: {str(e)}"

mcp.tool()(pack_model)


async def inspect_model(model_path: str) -> str:
    """Describe a .seofp file: layers, encodings and sizes."""
    try:
        with open(model_path, "rb") as f:
            info = describe(read_packed(f.read()))
        response = f"Model: {model_path} (format v{info['version']})\n"
        response += f"Parameters: {info['parameters']}\n"
        response += f"Encodings: {', '.join(info['encodings'])}\n"
        response += f"Size: {info['size_bytes']} bytes ({info['header_bytes']} header)\n"
        if info["codebook"]:
            response += f"Codebook: width {info['codebook']['width']}, min exponent {info['codebook']['min_exp']}\n"
        response += "Layers:\n" + "\n".join(f"  {i:2d}. {layer}" for i, layer in enumerate(info["layers"]))
        return response
    except Exception as e:
        return f"Error inspecting model: {str(e)}"

mcp.tool()(inspect_model)


async def exponent_histogram_tool(model_path: str) -> str:
    """Parameter counts per power-of-two exponent."""
    try:
        return cmd_histogram(model_path)
    except Exception as e:
        return f"Error building histogram: {str(e)}"

mcp.tool()(exponent_histogram_tool)


async def compression_summary(model_path: str) -> str:
    """Packed size of a model in every encoding it admits, with the change vs full32."""
    try:
        return to_markdown(size_table(unpack_file(model_path)))
    except Exception as e:
        return f"Error summarizing compression: {str(e)}"

mcp.tool()(compression_summary)


async def list_runs_tool(command: str = "", limit: int = 20) -> str:
    """Recently recorded runs from the registry."""
    try:
        runs = list_runs(command or None, limit, get_settings().database_url)
        if not runs:
            return "No runs recorded."
        lines = [f"{len(runs)} most recent runs:"]
        for run in runs:
            lines.append(f"- #{run['id']} {run['command']} {run['metric']}={run['value']:.6g} "
                         f"({run['model_path'] or '-'})")
        return "\n".join(lines)
    except Exception as e:
        return f"Error listing runs: {str(e)}"

mcp.tool()(list_runs_tool)


if __name__ == "__main__":
    # Create the run registry tables
    create_tables(settings.database_url)

    # Run the server
    mcp.run()
