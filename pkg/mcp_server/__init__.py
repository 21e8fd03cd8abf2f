"""MCP server module"""

from .mcp_server import main, mcp

__all__ = ['main', 'mcp']
